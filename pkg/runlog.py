"""Logging setup: console logger plus a JSON-lines audit trail of runs."""
import os
import json
import logging
from datetime import datetime
from logging.handlers import RotatingFileHandler

import pytz

logger = logging.getLogger("surfstokes")
run_logger = logging.getLogger("surfstokes_runs")


def get_timezone():
    """Timezone from the TZ environment variable, UTC when unknown."""
    name = os.environ.get("TZ", "UTC")
    try:
        return pytz.timezone(name)
    except pytz.exceptions.UnknownTimeZoneError:
        logger.warning(f"Unknown timezone '{name}', falling back to UTC")
        return pytz.UTC


def get_current_time():
    return datetime.now(get_timezone())


def log_dir() -> str:
    return os.environ.get("SURFSTOKES_LOG_DIR") or os.path.join(os.getcwd(), "logs")


def configure_logging(level: int = logging.INFO) -> str:
    """Attach handlers to both loggers. Returns the audit log path.

    Safe to call repeatedly; handlers are replaced, not stacked.
    """
    logger.setLevel(level)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s - %(levelname)s - %(message)s"))
        logger.addHandler(handler)

    directory = log_dir()
    try:
        os.makedirs(directory, exist_ok=True)
    except Exception as e:
        logger.error(f"Could not create log directory: {e}")
    path = os.path.join(directory, "runs.txt")

    run_logger.setLevel(logging.INFO)
    run_logger.propagate = False
    try:
        file_handler = RotatingFileHandler(path, maxBytes=1_000_000, backupCount=5)
        file_handler.setFormatter(logging.Formatter("%(message)s"))
        for old in run_logger.handlers:
            old.close()
        run_logger.handlers = [file_handler]
    except OSError as e:
        logger.error(f"Could not open run log {path}: {e}")
        run_logger.handlers = [logging.NullHandler()]
    return path


def log_run_event(command: str, status: str, details: str = "", **fields) -> dict:
    """Write one audit entry and return it."""
    entry = {
        "timestamp": get_current_time().isoformat(),
        "command": command,
        "status": status,
        "details": details,
    }
    entry.update(fields)
    run_logger.info(json.dumps(entry, sort_keys=True, default=str))
    return entry


def read_run_log(path: str) -> list:
    """Parse the audit file, skipping lines that are not JSON."""
    entries = []
    if not os.path.exists(path):
        return entries
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            json_start = line.find("{")
            if json_start == -1:
                continue
            try:
                entries.append(json.loads(line[json_start:]))
            except json.JSONDecodeError:
                logger.error(f"Error parsing run log line: {line.strip()}")
    return entries
