"""Concurrent jobs: bootstrap replicates and simulation studies."""

from .bootstrap import BootstrapJob, bootstrap_ci
from .study_runner import StudyJob, run_study

__all__ = [
    "BootstrapJob",
    "bootstrap_ci",
    "StudyJob",
    "run_study",
]
