"""
Centralized logging for the Nuclei Segmentation Toolkit.

Usage anywhere in the project:
    from core.logger import log, image_scope
    log.info("Stage 1 complete")
    with image_scope("tile_003.png"):
        log.warning("block 7 fell back to flat")   # tagged with the image

Writes to:
    data/nucseg.log    (rotating, max 5 MB x 3 backups)
    stderr             (abbreviated; stdout is reserved for CSV output)

Images are processed concurrently, so every record carries the name of the
image its thread is working on (`-` outside any image).
"""

from __future__ import annotations
import logging
import os
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from logging.handlers import RotatingFileHandler

from config import DATA_DIR

LOG_PATH = os.path.join(DATA_DIR, "nucseg.log")
MAX_BYTES = 5 * 1024 * 1024  # 5 MB per file
BACKUP_COUNT = 3
NO_IMAGE = "-"

_current_image: ContextVar[str] = ContextVar("nucseg_image", default=NO_IMAGE)

# ── Formatter ────────────────────────────────────────────

_FILE_FMT = logging.Formatter(
    "%(asctime)s  %(levelname)-8s  [%(threadName)s]  %(image)s  %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)

_CONSOLE_FMT = logging.Formatter(
    "%(levelname)-8s  %(image)s  %(message)s",
)


class ImageFilter(logging.Filter):
    """Stamp each record with the image the emitting thread is processing."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.image = _current_image.get()
        return True


@contextmanager
def image_scope(name: str):
    """Tag every record logged inside the block with `name`."""
    token = _current_image.set(name)
    try:
        yield
    finally:
        _current_image.reset(token)


def _build_logger() -> logging.Logger:
    """Create the app logger (called once at import time)."""
    logger = logging.getLogger("nucseg")
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    logger.addFilter(ImageFilter())

    # File handler (rotating)
    fh = RotatingFileHandler(
        LOG_PATH, maxBytes=MAX_BYTES, backupCount=BACKUP_COUNT,
        encoding="utf-8",
    )
    fh.setLevel(logging.DEBUG)
    fh.setFormatter(_FILE_FMT)
    logger.addHandler(fh)

    # Console handler (INFO+)
    ch = logging.StreamHandler(sys.stderr)
    ch.setLevel(logging.INFO)
    ch.setFormatter(_CONSOLE_FMT)
    logger.addHandler(ch)

    return logger


def set_console_level(level: int):
    """Adjust console verbosity (the log file always keeps DEBUG)."""
    for handler in log.handlers:
        if not isinstance(handler, RotatingFileHandler):
            handler.setLevel(level)


log = _build_logger()
