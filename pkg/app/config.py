"""
Application Configuration

Load settings from environment variables with validation.
"""

from functools import lru_cache
from pydantic import ConfigDict
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Application settings from environment variables."""

    # Environment
    environment: str = "development"
    debug: bool = False
    log_level: str = "INFO"

    # Artifacts
    output_dir: str = "./webm-output"

    # Concurrency (jobs and covariate screening)
    max_workers: int = 4

    # Dual solver
    max_iterations: int = 500
    gradient_tolerance: float = 1e-9       # optimizer target
    convergence_tolerance: float = 1e-6    # KKT residual relative to the uniform-weight gradient
    smoothing_epsilon: float = 1e-10

    # Delta tuning / screening
    delta_grid_size: int = 10
    break_factor: float = 2.0
    mdabw_scale: float = 1.0       # delta_k = c / sqrt(n)

    # Broadcasted spline regression
    spline_order: int = 4          # cubic
    spline_dimension: int = 8
    cp_rank: int = 3
    cp_restarts: int = 5
    cp_max_cycles: int = 200
    cp_tol: float = 1e-8
    cp_ridge: float = 1e-8

    # Bootstrap
    bootstrap_replicates: int = 200
    bootstrap_level: float = 0.95
    bootstrap_max_failure_rate: float = 0.10

    model_config = ConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore"
    )


@lru_cache()
def get_settings() -> Settings:
    """Cached settings instance."""
    return Settings()
