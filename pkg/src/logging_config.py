"""
Logging for pulse-dtw runs.

Console lines are human-readable and go to stderr. The log file holds one JSON object per record,
stamped with the command being run so that lines from consecutive runs can be told apart.
"""
import json
import logging
import sys
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

CONSOLE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
MAX_LOG_BYTES = 10 * 1024 * 1024
LOG_BACKUPS = 5

# attributes every LogRecord carries; anything else was passed through `extra`
RECORD_ATTRS = frozenset(vars(logging.makeLogRecord({}))) | {"message", "asctime", "extra_fields", "run"}

NOISY_LOGGERS = ("numba", "matplotlib")


def _jsonable(value: Any) -> Any:
    # numpy scalars and arrays arrive through extra_fields
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


class RunContextFilter(logging.Filter):
    """Attach the current run context (command, method, seed) to every record"""

    def __init__(self):
        super().__init__()
        self.context: Dict[str, Any] = {}

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = dict(self.context)
        return True


_run_context = RunContextFilter()


def bind_run(**context: Any) -> None:
    """Set the run context stamped on subsequent log records; None values are dropped."""
    _run_context.context = {key: value for key, value in context.items() if value is not None}


class JSONFormatter(logging.Formatter):
    """JSON-lines formatter for the run log file"""

    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }
        entry.update(getattr(record, "run", None) or {})

        if record.exc_info:
            entry["exception"] = self.formatException(record.exc_info)

        extra_fields = getattr(record, "extra_fields", None)
        if isinstance(extra_fields, dict):
            entry.update(extra_fields)

        entry.update({k: v for k, v in vars(record).items() if k not in RECORD_ATTRS and not k.startswith("_")})
        return json.dumps(entry, default=_jsonable)


def setup_logging(
    log_level: str = "INFO",
    log_file: Optional[str] = None,
    enable_file_logging: bool = True,
    enable_console_logging: bool = True,
) -> logging.Logger:
    """
    Configure the root logger for a CLI run.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Path to the JSON-lines log file
        enable_file_logging: Whether to write the log file
        enable_console_logging: Whether to echo records on stderr

    Returns:
        The root logger
    """
    level = getattr(logging, log_level.upper(), logging.INFO)
    root = logging.getLogger()
    root.setLevel(level)
    root.handlers.clear()

    handlers = []
    if enable_console_logging:
        # stdout carries the command's JSON result
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt="%Y-%m-%d %H:%M:%S"))
        handlers.append(console)

    if enable_file_logging and log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(log_file, maxBytes=MAX_LOG_BYTES, backupCount=LOG_BACKUPS)
        file_handler.setFormatter(JSONFormatter())
        handlers.append(file_handler)

    for handler in handlers:
        handler.setLevel(level)
        handler.addFilter(_run_context)
        root.addHandler(handler)

    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    return root


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)
