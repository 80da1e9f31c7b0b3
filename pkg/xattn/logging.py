"""Logging configuration for the package."""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from xattn.config import settings


def setup_logging(level: str | None = None) -> logging.Logger:
    """Configure the `xattn` logger.

    Console output goes to stderr because command results are written to
    stdout.
    """
    level_name = (level or settings.LOG_LEVEL).upper()

    logger = logging.getLogger("xattn")
    logger.setLevel(getattr(logging, level_name))

    # Remove handlers from a previous call
    logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, level_name))
    console_format = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    console_handler.setFormatter(console_format)
    logger.addHandler(console_handler)

    if settings.LOG_TO_FILE:
        log_dir = Path(settings.LOG_DIR)
        log_dir.mkdir(parents=True, exist_ok=True)

        file_handler = RotatingFileHandler(
            log_dir / "xattn.log",
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5,
        )
        file_handler.setLevel(logging.INFO)
        file_format = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - "
            "%(filename)s:%(lineno)d - %(message)s"
        )
        file_handler.setFormatter(file_format)
        logger.addHandler(file_handler)

    return logger
