# src/motion_metric/logger_setup.py

"""Configures the application logger."""

import logging
import os
import sys
from pathlib import Path

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logging(log_level: str = "INFO", log_file: Path | None = None) -> None:
    """Configures the root logger for a command run.

    The MOTION_METRIC_LOG_LEVEL environment variable, when set, wins over
    the configured level.

    Args:
        log_level (str): Minimum level name ('DEBUG', 'INFO', 'WARNING', ...).
        log_file (Path | None): Optional log file; console only when None.

    Raises:
        ValueError: If the level name is unknown.
    """
    log_level = os.getenv("MOTION_METRIC_LOG_LEVEL", log_level)
    numeric_level = getattr(logging, str(log_level).upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {log_level}")

    formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

    root = logging.getLogger()
    root.setLevel(numeric_level)
    root.handlers.clear()

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    root.addHandler(console_handler)

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    logging.info(f"Logging initialized. Level: {log_level}. File: {log_file if log_file else 'Console'}")


def get_logger(name: str) -> logging.Logger:
    """Returns a logger instance for the given name."""
    return logging.getLogger(name)
