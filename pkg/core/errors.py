"""
Error types shared across the pipeline.
"""


class NucsegError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(NucsegError, ValueError):
    """Invalid configuration key or value (message names the key)."""


class ImageFormatError(NucsegError, ValueError):
    """Raster cannot be read or written under the supported formats."""


class AnnotationError(NucsegError, ValueError):
    """Annotation file is not well-formed ImageScope XML."""


class ContractError(NucsegError, ValueError):
    """An operation was called outside its precondition."""


class StageError(NucsegError, RuntimeError):
    """A pipeline stage failed; `stage` names it, the cause is chained."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


class TileSkipped(NucsegError):
    """A tile cannot be used for fitting. Not a failure; carries the reason."""

    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason
