"""
Tests for the weighted linear effect model and its sandwich variance
"""

import math

import numpy as np
import pytest

from app.core.exceptions import InputError, SingularDesignError
from app.models.dataset import Dataset
from app.models.effect import VarianceMethod
from app.services.parametric import (
    coefficient_rmse,
    design_matrix,
    fit_linear_effect,
    sandwich_variance,
)

B = np.array([[1.0, -0.5], [0.25, 2.0]])


@pytest.fixture
def linear_dataset():
    rng = np.random.default_rng(5)
    n = 80
    treatments = rng.normal(size=(n, 2, 2))
    covariates = rng.normal(size=(n, 1))
    outcomes = 2.0 + np.einsum("iab,ab->i", treatments, B) + rng.normal(scale=0.5, size=n)
    return Dataset(treatments=treatments, covariates=covariates, outcomes=outcomes)


class TestFitLinearEffect:
    """Weighted least squares."""

    def test_noiseless_recovery(self, linear_dataset):
        outcomes = 2.0 + np.einsum("iab,ab->i", linear_dataset.treatments, B)
        dataset = Dataset(treatments=linear_dataset.treatments, covariates=linear_dataset.covariates, outcomes=outcomes)
        weights = np.random.default_rng(1).uniform(0.5, 2.0, size=dataset.n)
        model = fit_linear_effect(dataset, weights)
        assert abs(model.intercept - 2.0) < 1e-10
        np.testing.assert_allclose(model.coefficient_matrix, B, atol=1e-10)
        np.testing.assert_allclose(model.residuals, 0.0, atol=1e-10)

    def test_row_major_names(self, linear_dataset):
        _, names = design_matrix(linear_dataset)
        assert names == ["intercept", "t_1_1", "t_1_2", "t_2_1", "t_2_2"]
        model = fit_linear_effect(linear_dataset, np.ones(linear_dataset.n))
        assert model.column_names == names
        assert model.coefficients.shape == (5,)

    def test_weight_scale_invariance(self, linear_dataset):
        weights = np.random.default_rng(2).uniform(0.2, 3.0, size=linear_dataset.n)
        first = fit_linear_effect(linear_dataset, weights)
        second = fit_linear_effect(linear_dataset, 7.0 * weights)
        np.testing.assert_allclose(first.coefficients, second.coefficients, rtol=1e-9, atol=1e-12)

    def test_predict_matches_fitted_values(self, linear_dataset):
        model = fit_linear_effect(linear_dataset, np.ones(linear_dataset.n))
        np.testing.assert_allclose(model.predict(linear_dataset.treatments), model.fitted_values, atol=1e-12)

    def test_duplicate_column_is_singular(self, linear_dataset):
        treatments = linear_dataset.treatments.copy()
        treatments[:, 1, 1] = treatments[:, 0, 0]
        dataset = Dataset(treatments=treatments, covariates=linear_dataset.covariates, outcomes=linear_dataset.outcomes)
        with pytest.raises(SingularDesignError) as info:
            fit_linear_effect(dataset, np.ones(dataset.n))
        assert info.value.dependent_columns[0] in {"t_1_1", "t_2_2"}
        assert info.value.exit_code == 2

    def test_weight_on_one_unit_is_singular(self):
        """Near-zero weights elsewhere leave a single effective observation for five coefficients."""
        rng = np.random.default_rng(13)
        n = 30
        treatments = rng.normal(size=(n, 2, 2))
        dataset = Dataset(treatments=treatments, covariates=rng.normal(size=(n, 1)), outcomes=rng.normal(size=n))
        weights = np.full(n, 1e-12)
        weights[0] = 1.0
        with pytest.raises(SingularDesignError) as info:
            fit_linear_effect(dataset, weights)
        assert len(info.value.dependent_columns) == 4

    def test_support_smaller_than_design_is_singular(self, linear_dataset):
        weights = np.full(linear_dataset.n, 1e-12)
        weights[:4] = 1.0
        with pytest.raises(SingularDesignError):
            fit_linear_effect(linear_dataset, weights)

    def test_support_equal_to_design_fits(self, linear_dataset):
        weights = np.full(linear_dataset.n, 1e-12)
        weights[:5] = 1.0
        model = fit_linear_effect(linear_dataset, weights)
        np.testing.assert_allclose(model.residuals[:5], 0.0, atol=1e-6)

    def test_all_zero_weights_rejected(self, linear_dataset):
        with pytest.raises(InputError):
            fit_linear_effect(linear_dataset, np.zeros(linear_dataset.n))

    def test_weighted_residuals_orthogonal_to_design(self, linear_dataset):
        weights = np.random.default_rng(6).uniform(0.2, 3.0, size=linear_dataset.n)
        model = fit_linear_effect(linear_dataset, weights)
        design, _ = design_matrix(linear_dataset)
        np.testing.assert_allclose(design.T @ (weights * model.residuals), 0.0, atol=1e-8)

    def test_matches_normal_equations(self):
        """An explicit normal-equations solve on the sqrt(w)-scaled rows gives the same coefficients."""
        rng = np.random.default_rng(17)
        n = 50
        treatments = rng.normal(size=(n, 2, 3))
        outcomes = rng.normal(size=n) + treatments[:, 0, 1]
        dataset = Dataset(treatments=treatments, covariates=rng.normal(size=(n, 2)), outcomes=outcomes)
        weights = rng.uniform(0.1, 4.0, size=n)

        design, _ = design_matrix(dataset)
        scaled = design * np.sqrt(weights)[:, None]
        expected = np.linalg.solve(scaled.T @ scaled, scaled.T @ (outcomes * np.sqrt(weights)))
        model = fit_linear_effect(dataset, weights)
        np.testing.assert_allclose(model.coefficients, expected, rtol=0.0, atol=1e-9)

    def test_negative_weights_rejected(self, linear_dataset):
        weights = np.ones(linear_dataset.n)
        weights[0] = -1.0
        with pytest.raises(InputError):
            fit_linear_effect(linear_dataset, weights)


class TestSandwichVariance:
    """Plug-in sandwich covariance."""

    def test_unit_weights_match_hc0(self, linear_dataset):
        """With unit weights the sandwich is the HC0 covariance."""
        weights = np.ones(linear_dataset.n)
        model = fit_linear_effect(linear_dataset, weights)
        variance = sandwich_variance(model, linear_dataset, weights)

        design, _ = design_matrix(linear_dataset)
        gram_inv = np.linalg.inv(design.T @ design)
        meat = design.T @ (model.residuals[:, None] ** 2 * design)
        expected = gram_inv @ meat @ gram_inv
        np.testing.assert_allclose(variance.covariance, expected, rtol=1e-8, atol=1e-14)
        assert variance.method == VarianceMethod.SANDWICH

    def test_symmetric_with_positive_errors(self, linear_dataset):
        weights = np.random.default_rng(4).uniform(0.5, 1.5, size=linear_dataset.n)
        model = fit_linear_effect(linear_dataset, weights)
        variance = sandwich_variance(model, linear_dataset, weights)
        np.testing.assert_array_equal(variance.covariance, variance.covariance.T)
        assert np.all(variance.standard_errors > 0)

    def test_zero_residuals_give_zero_covariance(self, linear_dataset):
        outcomes = 2.0 + np.einsum("iab,ab->i", linear_dataset.treatments, B)
        dataset = Dataset(treatments=linear_dataset.treatments, covariates=linear_dataset.covariates, outcomes=outcomes)
        weights = np.random.default_rng(3).uniform(0.5, 2.0, size=dataset.n)
        model = fit_linear_effect(dataset, weights)
        variance = sandwich_variance(model, dataset, weights)
        np.testing.assert_allclose(variance.covariance, 0.0, atol=1e-20)

    def test_invariant_to_weight_scale(self, linear_dataset):
        weights = np.random.default_rng(4).uniform(0.5, 1.5, size=linear_dataset.n)
        model = fit_linear_effect(linear_dataset, weights)
        first = sandwich_variance(model, linear_dataset, weights)
        second = sandwich_variance(model, linear_dataset, 10.0 * weights)
        np.testing.assert_allclose(first.standard_errors, second.standard_errors, rtol=1e-10)


class TestCoefficientRmse:

    def test_hand_computed(self):
        assert math.isclose(coefficient_rmse(np.eye(2), np.zeros((2, 2))), math.sqrt(0.5))

    def test_zero_for_exact(self):
        assert coefficient_rmse(B, B) == 0.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
