"""JSON-lines logging for model runs."""

import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict

LOGGER_NAME = "cdma_downlink"


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):
        return _jsonable(value.item())
    return value


class JSONFormatter(logging.Formatter):
    """One JSON object per record: timestamp, level, logger, message, extra_data."""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if hasattr(record, "extra_data"):
            log_data.update(_jsonable(record.extra_data))
        return json.dumps(log_data, ensure_ascii=False, default=str)


def setup_logger(log_path: Path, run_id: str, verbose: bool = False) -> logging.Logger:
    """
    Configure the package logger for one run.

    Args:
        log_path: Directory to write logs to
        run_id: Run identifier, recorded on the first line
        verbose: Whether to also log to the console

    Returns:
        The package logger; library modules log through its children
    """
    log_path.mkdir(parents=True, exist_ok=True)

    timestamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H-%M-%S")
    log_file = log_path / f"cdma_downlink_{timestamp}.jsonl"

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG)

    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
        handler.close()

    file_handler = logging.FileHandler(log_file, encoding="utf-8")
    file_handler.setFormatter(JSONFormatter())
    logger.addHandler(file_handler)

    if verbose:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(JSONFormatter())
        logger.addHandler(console_handler)

    logger.info("Run started", extra={"extra_data": {"run_id": run_id, "log_file": str(log_file)}})
    return logger


def _emit(logger: logging.Logger, name: str, msg: str, data: Dict[str, Any]) -> None:
    record = logging.LogRecord(
        name=name,
        level=logging.INFO,
        pathname="",
        lineno=0,
        msg=msg,
        args=(),
        exc_info=None,
    )
    record.extra_data = data
    logger.handle(record)


def log_point(logger: logging.Logger, data: Dict[str, Any]) -> None:
    """Log one evaluated sweep point."""
    _emit(logger, f"{LOGGER_NAME}.point", "Point evaluated", data)


def log_summary(logger: logging.Logger, data: Dict[str, Any]) -> None:
    """Log a run summary with structured data."""
    _emit(logger, f"{LOGGER_NAME}.summary", "Run summary", data)
