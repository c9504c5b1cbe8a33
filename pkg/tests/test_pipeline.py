"""
Tests for the weighting pipeline and the method comparison
"""

import numpy as np
import pytest

from app.core.exceptions import ParameterError, TuningFailedError
from app.models.dataset import BasisSpec, CovariateBasis
from app.models.pipeline import BalancePipelineConfig, WeightingMethod
from app.services import pipeline as pipeline_service
from app.services.pipeline import (
    compare_methods,
    estimate_weights,
    fixed_weights_result,
    prepare_moments,
    run_weighting,
)
from app.services.scenarios import generate_scenario

LINEAR = BasisSpec(covariate_basis=CovariateBasis.LINEAR)


class TestRunWeighting:
    """Dataset plus configuration to weights."""

    def test_fixed_delta_webm(self, small_dataset):
        pipeline = BalancePipelineConfig(basis=LINEAR, tune_delta=False)
        pipeline = pipeline.model_copy(update={"balance": pipeline.balance.with_delta(0.05)})
        outcome = run_weighting(small_dataset, pipeline)
        assert outcome.tuning is None
        assert outcome.result.weim <= 0.05 + 1e-8
        assert outcome.moments.n == small_dataset.n
        np.testing.assert_allclose(outcome.result.weights.mean(), 1.0, rtol=1e-8)

    def test_tuned_webm_records_path(self, small_dataset):
        outcome = run_weighting(small_dataset, BalancePipelineConfig(basis=LINEAR))
        assert outcome.tuning is not None
        assert outcome.result.delta_used == outcome.tuning.delta_star

    def test_unweighted_diagnostics(self, small_dataset):
        result = estimate_weights(small_dataset, BalancePipelineConfig(basis=LINEAR, method=WeightingMethod.UNWEIGHTED))
        np.testing.assert_array_equal(result.weights, np.ones(small_dataset.n))
        assert result.weim > 0
        assert result.effective_sample_size == pytest.approx(small_dataset.n)

    def test_oracle_needs_truth(self, small_dataset):
        pipeline = BalancePipelineConfig(basis=LINEAR, method=WeightingMethod.ORACLE)
        with pytest.raises(ParameterError):
            estimate_weights(small_dataset, pipeline)

    def test_oracle_with_truth(self):
        dataset, truth = generate_scenario(1, 200, seed=12)
        pipeline = BalancePipelineConfig(basis=truth.basis, method=WeightingMethod.ORACLE)
        result = estimate_weights(dataset, pipeline, truth)
        assert result.method == "oracle"
        assert np.all(result.weights > 0)


class TestFixedWeights:

    def test_imbalance_of_uniform_weights(self, shifted_system):
        result = fixed_weights_result("unweighted", np.ones(5), shifted_system)
        np.testing.assert_allclose(result.imbalance, [0.3], atol=1e-12)
        assert result.weim == pytest.approx(0.09)
        assert result.theta.shape == (shifted_system.k_effective,)


class TestScreeningPath:
    """Screening narrows the basis to the selected covariates."""

    def test_moments_use_selected_covariates(self):
        dataset, truth = generate_scenario(5, 300, seed=4)
        pipeline = BalancePipelineConfig(basis=truth.basis, screening=True, screening_delta=0.05)
        ms, screening = prepare_moments(dataset, pipeline)
        assert screening is not None
        assert 1 <= screening.selected_count <= dataset.n_covariates
        expected_raw = (dataset.p * dataset.q + 1) * (screening.selected_count + 1) - 1
        assert ms.k_effective <= expected_raw

    def test_without_screening(self, small_dataset):
        ms, screening = prepare_moments(small_dataset, BalancePipelineConfig(basis=LINEAR))
        assert screening is None
        assert ms.k_effective == 4 + 3 + 12


class TestCompareMethods:
    """Unweighted, EB, MDABW and WEBM side by side."""

    def test_all_methods_reported(self, small_dataset):
        rows = compare_methods(small_dataset, BalancePipelineConfig(basis=LINEAR))
        assert [row.method for row in rows] == [
            WeightingMethod.UNWEIGHTED, WeightingMethod.EB, WeightingMethod.MDABW, WeightingMethod.WEBM,
        ]
        by_method = {row.method: row for row in rows}
        unweighted = by_method[WeightingMethod.UNWEIGHTED]
        webm = by_method[WeightingMethod.WEBM]
        assert webm.error is None
        assert webm.weim < unweighted.weim

    def test_failure_is_reported_not_raised(self, small_dataset, monkeypatch):
        original = pipeline_service.weights_for

        def failing(method, ms, pipeline, dataset, truth=None):
            if method == WeightingMethod.WEBM:
                raise TuningFailedError({0.1: "planted"})
            return original(method, ms, pipeline, dataset, truth)

        monkeypatch.setattr(pipeline_service, "weights_for", failing)
        rows = compare_methods(small_dataset, BalancePipelineConfig(basis=LINEAR))
        webm = [row for row in rows if row.method == WeightingMethod.WEBM][0]
        assert webm.weim is None
        assert webm.error


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
