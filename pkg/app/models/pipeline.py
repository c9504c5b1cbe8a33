"""
Pipeline Models

Configuration objects that tie basis construction, weighting and
estimation together for the CLI, the bootstrap and the study runner.
"""

from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from ..config import get_settings
from .balance import BalanceConfig, BalanceResult, TuningResult
from .dataset import BasisSpec
from .moments import MomentSystem
from .screening import ScreeningResult
from .spline import BroadcastOptions


class WeightingMethod(str, Enum):
    """How balancing weights are obtained."""
    UNWEIGHTED = "unweighted"
    EB = "eb"
    MDABW = "mdabw"
    WEBM = "webm"
    ORACLE = "oracle"


class Estimator(str, Enum):
    LINEAR = "linear"
    BROADCASTED = "broadcasted"


class BalancePipelineConfig(BaseModel):
    """Everything needed to turn a dataset into balancing weights."""
    basis: BasisSpec = Field(default_factory=BasisSpec)
    method: WeightingMethod = WeightingMethod.WEBM
    balance: BalanceConfig = Field(default_factory=BalanceConfig)
    tune_delta: bool = Field(True, description="select delta on the grid (WEBM only)")
    delta_grid: Optional[List[float]] = Field(None, description="None uses the default logarithmic grid")
    mdabw_scale: float = Field(default_factory=lambda: get_settings().mdabw_scale, gt=0.0)
    screening: bool = False
    screening_delta: Optional[float] = Field(
        None, gt=0.0, description="fixed delta along the screening path; None uses the middle of the default grid"
    )
    break_factor: float = Field(default_factory=lambda: get_settings().break_factor, gt=1.0)

    model_config = ConfigDict(frozen=True)


class PipelineConfig(BaseModel):
    """CLI run configuration (flags, optionally seeded from a sidecar JSON)."""
    data: Optional[str] = None
    p: Optional[int] = Field(None, ge=1)
    q: Optional[int] = Field(None, ge=1)
    pipeline: BalancePipelineConfig = Field(default_factory=BalancePipelineConfig)
    estimator: Estimator = Estimator.LINEAR
    broadcast: BroadcastOptions = Field(default_factory=BroadcastOptions)
    bootstrap: int = Field(0, ge=0)
    level: float = Field(default_factory=lambda: get_settings().bootstrap_level, gt=0.0, lt=1.0)
    output_dir: str = Field(default_factory=lambda: get_settings().output_dir)
    seed: int = 0


class WeightingOutcome(BaseModel):
    """Weights plus the intermediate products that produced them."""
    result: BalanceResult
    moments: MomentSystem
    screening: Optional[ScreeningResult] = None
    tuning: Optional[TuningResult] = None

    model_config = ConfigDict(arbitrary_types_allowed=True)


class MethodComparison(BaseModel):
    """Balance achieved by one weighting method on a shared moment system."""
    method: WeightingMethod
    weim: Optional[float] = None
    effective_sample_size: Optional[float] = None
    converged: bool = False
    delta_used: Optional[float] = None
    error: Optional[str] = None
