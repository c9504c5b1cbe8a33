"""
Pytest Fixtures

Shared datasets, moment systems and settings isolation.
"""

import numpy as np
import pytest
import structlog

from app.config import get_settings
from app.models.dataset import BasisSpec, CovariateBasis, Dataset
from app.models.moments import MomentSystem
from app.services.moment_builder import build_moment_system
from app.services.scenarios import generate_scenario


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Fresh settings and logging per test, artifacts under tmp_path."""
    monkeypatch.setenv("OUTPUT_DIR", str(tmp_path / "out"))
    monkeypatch.setenv("ENVIRONMENT", "development")
    get_settings.cache_clear()
    yield get_settings()
    get_settings.cache_clear()
    structlog.contextvars.clear_contextvars()
    structlog.reset_defaults()


@pytest.fixture(scope="session")
def scenario1():
    """Scenario-1 sample (n=500) with its ground truth."""
    return generate_scenario(1, 500, seed=2024)


@pytest.fixture(scope="session")
def scenario1_moments(scenario1):
    """Scenario-1 moments with the (1, X, X^2) covariate basis."""
    dataset, truth = scenario1
    return build_moment_system(dataset, truth.basis)


@pytest.fixture(scope="session")
def scenario1_linear_moments(scenario1):
    dataset, _ = scenario1
    return build_moment_system(dataset, BasisSpec(covariate_basis=CovariateBasis.LINEAR))


@pytest.fixture
def small_dataset():
    """n=40, 2 x 2 treatment driven by the first of three covariates."""
    rng = np.random.default_rng(7)
    n = 40
    covariates = rng.normal(size=(n, 3))
    treatments = 0.8 * covariates[:, 0, None, None] * np.array([[1.0, 0.5], [0.0, 1.0]]) \
        + rng.normal(size=(n, 2, 2))
    outcomes = 1.0 + treatments[:, 0, 0] - treatments[:, 1, 1] + covariates[:, 0] + rng.normal(size=n)
    return Dataset(treatments=treatments, covariates=covariates, outcomes=outcomes)


@pytest.fixture
def shifted_system():
    """One-constraint system whose uniform weights are visibly imbalanced."""
    column = np.array([-1.2, -0.4, 0.1, 0.5, 1.0]) + 0.3
    return MomentSystem.from_matrix(column)
