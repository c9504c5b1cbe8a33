"""Core infrastructure modules."""

from .exceptions import (
    BalancingError,
    InputError,
    ParameterError,
    DivergingDualError,
    handle_cli_exception,
)
from .logging import bind_run_context, setup_logging, get_logger

__all__ = [
    "BalancingError",
    "InputError",
    "ParameterError",
    "DivergingDualError",
    "handle_cli_exception",
    "bind_run_context",
    "setup_logging",
    "get_logger",
]
