"""
Exceptions

Custom exceptions and the CLI exception handler.

Every error carries the process exit code the CLI reports for it:
1 for input/parameter problems, 2 for solver failures.
"""

import sys

from .logging import get_logger

logger = get_logger(__name__)

INPUT_ERROR = 1
SOLVER_FAILURE = 2


class BalancingError(Exception):
    """Base exception for balancing and estimation errors."""

    def __init__(self, message: str, exit_code: int = INPUT_ERROR):
        self.message = message
        self.exit_code = exit_code
        super().__init__(message)


class InputError(BalancingError):
    """Malformed or non-finite input data."""


class ParameterError(BalancingError):
    """Invalid configuration value."""


class EmptySystemError(BalancingError):
    """Every moment column was degenerate."""

    def __init__(self, dropped: int):
        super().__init__(
            message=f"all {dropped} moment columns have zero variance; nothing to balance"
        )


class DomainError(BalancingError):
    """Argument outside the supported domain."""


class DegenerateDistanceError(BalancingError):
    """Distance-based statistic with a constant input."""


class UnsupportedDGPError(BalancingError):
    """Oracle quantities requested for a non-Gaussian assignment model."""


class StudyConfigError(BalancingError):
    """Study configuration references an unavailable combination."""


class DivergingDualError(BalancingError):
    """Dual objective diverged (infeasible or ill-scaled balancing system)."""

    def __init__(self, message: str):
        super().__init__(message=message, exit_code=SOLVER_FAILURE)


class TuningFailedError(BalancingError):
    """Every delta on the tuning grid failed."""

    def __init__(self, diagnostics: dict):
        self.diagnostics = diagnostics
        detail = ", ".join(f"{delta:g}: {reason}" for delta, reason in diagnostics.items())
        super().__init__(
            message=f"delta tuning failed at every grid point ({detail})",
            exit_code=SOLVER_FAILURE
        )


class SingularDesignError(BalancingError):
    """Weighted design matrix is rank deficient."""

    def __init__(self, dependent_columns: list[str]):
        self.dependent_columns = dependent_columns
        super().__init__(
            message=f"weighted design is rank deficient; dependent columns: {', '.join(dependent_columns)}",
            exit_code=SOLVER_FAILURE
        )


class SingularHessianError(BalancingError):
    """Hessian of the weighted objective cannot be inverted."""

    def __init__(self, message: str = "weighted Hessian is singular"):
        super().__init__(message=message, exit_code=SOLVER_FAILURE)


class BootstrapFailedError(BalancingError):
    """Too many bootstrap replicates failed."""

    def __init__(self, failed: int, total: int):
        self.failed = failed
        self.total = total
        super().__init__(
            message=f"{failed} of {total} bootstrap replicates failed (limit exceeded)",
            exit_code=SOLVER_FAILURE
        )


def handle_cli_exception(exc: BalancingError) -> int:
    """Log a BalancingError, print a one-line message and return its exit code."""
    logger.error("command_failed", error_type=type(exc).__name__, error=exc.message)
    print(f"error: {exc.message}", file=sys.stderr)
    return exc.exit_code
