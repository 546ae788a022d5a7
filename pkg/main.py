"""
Nuclei Segmentation Toolkit - Main Entry Point
Two-stage unsupervised nuclei instance segmentation for H&E images.
"""
import sys
import os

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import APP_NAME          # noqa: E402  (must come after path fix)
from core.logger import log          # noqa: E402
from core import cli                 # noqa: E402


def _handle_exception(exc_type, exc_value, exc_tb):
    """Catch any uncaught exception and write it to nucseg.log."""
    if issubclass(exc_type, KeyboardInterrupt):
        sys.__excepthook__(exc_type, exc_value, exc_tb)
        return
    log.critical("Uncaught exception", exc_info=(exc_type, exc_value, exc_tb))


def main(argv=None):
    sys.excepthook = _handle_exception
    log.debug(f"=== {APP_NAME} starting ===")
    try:
        return cli.main(argv)
    except Exception:
        log.critical("Fatal error", exc_info=True)
        raise
    finally:
        log.debug(f"=== {APP_NAME} stopped ===")


if __name__ == "__main__":
    sys.exit(main())
