"""
Logging for experiment runs.

Console output goes to stdout. A run directory can additionally get its own
rotating ``logs/run.log`` so a resumed experiment keeps one history next to
its manifest and checkpoints.
"""

import logging
import logging.handlers
import sys
from pathlib import Path
from typing import List, Optional, Union

from ..config.settings import LoggingSettings, get_settings

RUN_LOG_NAME = "run.log"

# Per-step loops; they stay at INFO summaries unless DEBUG is requested.
STEP_LOGGERS = ("src.training.trainer", "src.federation.distill")


class RunLogHandler(logging.handlers.RotatingFileHandler):
    """File handler bound to one run directory."""

    def __init__(self, run_dir: Path, settings: LoggingSettings) -> None:
        log_dir = run_dir / "logs"
        log_dir.mkdir(parents=True, exist_ok=True)
        super().__init__(
            log_dir / RUN_LOG_NAME,
            maxBytes=settings.max_file_size,
            backupCount=settings.backup_count,
        )
        self.run_dir = run_dir


def _level(name: str) -> int:
    return getattr(logging, name.upper(), logging.INFO)


def setup_logging(log_file: Optional[str] = None, log_level: Optional[str] = None) -> None:
    """
    Configure the root logger once per process.

    Args:
        log_file: Extra rotating log file. Defaults to ``FEDSEG_LOG_FILE_PATH``.
        log_level: Level name. Defaults to ``FEDSEG_LOG_LEVEL``, or DEBUG in debug mode.
    """
    settings = get_settings()
    cfg = settings.logging
    if log_level is None:
        log_level = "DEBUG" if settings.debug_mode else cfg.level
    if log_file is None:
        log_file = cfg.file_path

    level = _level(log_level)
    formatter = logging.Formatter(cfg.format)
    root = logging.getLogger()
    root.setLevel(level)
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler(sys.stdout)
    console.setLevel(level)
    console.setFormatter(formatter)
    root.addHandler(console)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_file, maxBytes=cfg.max_file_size, backupCount=cfg.backup_count
        )
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    for name in STEP_LOGGERS:
        logging.getLogger(name).setLevel(logging.DEBUG if level <= logging.DEBUG else logging.INFO)

    logging.getLogger(__name__).debug(f"Logging configured: level={log_level}, file={log_file}")


def run_log_handlers() -> List[RunLogHandler]:
    return [h for h in logging.getLogger().handlers if isinstance(h, RunLogHandler)]


def attach_run_log(run_dir: Union[str, Path]) -> Optional[Path]:
    """Also write log records to ``<run_dir>/logs/run.log``; returns the file path.

    Returns None when run logs are disabled. Attaching the same directory twice
    keeps a single handler.
    """
    cfg = get_settings().logging
    if not cfg.run_log:
        return None
    run_dir = Path(run_dir).resolve()
    for handler in run_log_handlers():
        if handler.run_dir == run_dir:
            return Path(handler.baseFilename)
    root = logging.getLogger()
    handler = RunLogHandler(run_dir, cfg)
    handler.setLevel(root.level)
    handler.setFormatter(logging.Formatter(cfg.format))
    root.addHandler(handler)
    return Path(handler.baseFilename)


def detach_run_logs() -> None:
    """Close and remove every run-directory handler."""
    root = logging.getLogger()
    for handler in run_log_handlers():
        root.removeHandler(handler)
        handler.close()
