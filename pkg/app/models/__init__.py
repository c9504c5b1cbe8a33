"""Pydantic models for matrix-treatment balancing."""

from .dataset import Dataset, BasisSpec, CovariateBasis, TreatmentBasis, DiagnosticsReport
from .moments import MomentSystem
from .balance import BalanceConfig, BalanceResult, DualForm, TuningResult
from .screening import ScreeningResult, CovariateRanking
from .effect import LinearEffectModel, VarianceEstimate, BootstrapSummary
from .spline import SplineSpec, CPModel, BroadcastOptions
from .pipeline import BalancePipelineConfig, PipelineConfig, WeightingMethod, Estimator
from .study import ScenarioTruth, StudyConfig, StudyReport, StudyCell

__all__ = [
    "Dataset",
    "BasisSpec",
    "CovariateBasis",
    "TreatmentBasis",
    "DiagnosticsReport",
    "MomentSystem",
    "BalanceConfig",
    "BalanceResult",
    "DualForm",
    "TuningResult",
    "ScreeningResult",
    "CovariateRanking",
    "LinearEffectModel",
    "VarianceEstimate",
    "BootstrapSummary",
    "SplineSpec",
    "CPModel",
    "BroadcastOptions",
    "BalancePipelineConfig",
    "PipelineConfig",
    "WeightingMethod",
    "Estimator",
    "ScenarioTruth",
    "StudyConfig",
    "StudyReport",
    "StudyCell",
]
