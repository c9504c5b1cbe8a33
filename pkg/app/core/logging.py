"""
Structured Logging Configuration

structlog with a console renderer in development and JSON lines otherwise.
Everything goes to stderr; stdout is reserved for command results.
"""

import logging
import sys
from typing import Any, Optional

import numpy as np
import structlog
from structlog.types import EventDict, Processor

from ..config import get_settings


def numpy_to_builtin(_, __, event_dict: EventDict) -> EventDict:
    """Turn numpy scalars and small arrays into plain values the JSON renderer accepts."""
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
        elif isinstance(value, np.ndarray):
            event_dict[key] = value.tolist() if value.size <= 16 else f"array{value.shape}"
    return event_dict


def setup_logging(log_level: Optional[str] = None):
    """
    Configure structured logging.

    Args:
        log_level: Override log level (DEBUG, INFO, WARNING, ERROR)
    """
    settings = get_settings()
    if log_level is None:
        log_level = "DEBUG" if settings.debug else settings.log_level
    level = getattr(logging, log_level.upper())

    logging.basicConfig(format="%(message)s", stream=sys.stderr, level=level)

    shared_processors: list[Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        numpy_to_builtin,
        structlog.processors.StackInfoRenderer(),
    ]

    if settings.environment == "development":
        renderer: list[Processor] = [structlog.dev.ConsoleRenderer(colors=sys.stderr.isatty())]
    else:
        renderer = [structlog.processors.format_exc_info, structlog.processors.JSONRenderer()]

    # loggers are not cached: the stderr stream is resolved on every configure
    structlog.configure(
        processors=shared_processors + renderer,
        wrapper_class=structlog.make_filtering_bound_logger(level),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


def bind_run_context(**fields: Any) -> None:
    """Attach fields (command, seed, ...) to every log line of the current run."""
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(**fields)


def get_logger(name: str = "webm") -> structlog.BoundLogger:
    """Get a structured logger instance."""
    return structlog.get_logger(name)
