"""Logging utility for gpfeed."""
from __future__ import annotations

import logging
import logging.handlers
import os
import sys
from pathlib import Path

_run_logger: logging.Logger | None = None


def setup_run_logging(out_dir: Path) -> None:
    """Attach a rotating file handler writing to ``out_dir/gpfeed.log``."""
    global _run_logger
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "gpfeed.log"
    logger = logging.getLogger("gpfeed-run")
    logger.setLevel(logging.INFO)
    for existing in list(logger.handlers):
        logger.removeHandler(existing)
        existing.close()
    handler = logging.handlers.RotatingFileHandler(
        log_path, maxBytes=5 * 1024 * 1024, backupCount=3,
    )
    handler.setFormatter(logging.Formatter("%(asctime)s %(message)s", datefmt="%Y-%m-%d %H:%M:%S"))
    logger.addHandler(handler)
    _run_logger = logger


def close_run_logging() -> None:
    """Detach the run log file handler, if any."""
    global _run_logger
    if _run_logger is None:
        return
    for handler in list(_run_logger.handlers):
        _run_logger.removeHandler(handler)
        handler.close()
    _run_logger = None


def log(msg: str) -> None:
    """Log to stderr and, during a CLI run, to the run log file."""
    if _run_logger:
        _run_logger.info(msg)
    if os.environ.get("GPFEED_QUIET") != "1":
        print(f"[gpfeed] {msg}", file=sys.stderr)
