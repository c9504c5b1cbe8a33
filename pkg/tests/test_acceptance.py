"""
Monte-Carlo acceptance suite

Replicated simulation checks of method orderings, oracle-weight identities,
rates and interval coverage. Excluded from the default run:

    pytest -m slow
"""

import numpy as np
import pytest

from app.jobs.bootstrap import bootstrap_ci
from app.jobs.study_runner import run_study
from app.models.balance import BalanceConfig, DualForm
from app.models.moments import MomentSystem
from app.models.pipeline import BalancePipelineConfig, Estimator, WeightingMethod
from app.models.spline import BroadcastOptions
from app.models.study import StudyConfig
from app.services.balancer import (
    dual_objective,
    normalized_dual_objective,
    solve_weights,
    tune_delta,
)
from app.services.broadcast import fit_broadcasted
from app.services.moment_builder import build_moment_system
from app.services.parametric import fit_linear_effect, sandwich_variance
from app.services.pipeline import estimate_weights
from app.services.scenarios import (
    generate_scenario,
    log_log_slope,
    oracle_weights,
    true_surface,
    weighted_objective_check,
    weight_error,
)
from app.services.screening import rank_covariates

pytestmark = pytest.mark.slow

ALL_METHODS = [WeightingMethod.UNWEIGHTED, WeightingMethod.MDABW, WeightingMethod.EB, WeightingMethod.WEBM]


def mean_of(report, scenario_id, n, method):
    return report.cell(scenario_id, n, method).mean


class TestMethodOrderings:
    """Mean RMSE orderings across 100 replicates."""

    @pytest.mark.asyncio
    async def test_scenario_one(self):
        report = await run_study(StudyConfig(scenarios=[1], sample_sizes=[500, 1000], replicates=100, master_seed=1))
        for n in (500, 1000):
            webm = mean_of(report, 1, n, WeightingMethod.WEBM)
            assert webm <= mean_of(report, 1, n, WeightingMethod.MDABW)
            assert webm <= mean_of(report, 1, n, WeightingMethod.EB)
            assert webm < mean_of(report, 1, n, WeightingMethod.UNWEIGHTED)
        assert abs(mean_of(report, 1, 1000, WeightingMethod.WEBM) - 0.4585) <= 0.10

    @pytest.mark.asyncio
    async def test_scenario_two_interactions_hurt_exact_balancing(self):
        report = await run_study(StudyConfig(scenarios=[2], sample_sizes=[500], replicates=100, master_seed=2))
        webm = mean_of(report, 2, 500, WeightingMethod.WEBM)
        eb = mean_of(report, 2, 500, WeightingMethod.EB)
        assert eb > webm
        assert mean_of(report, 2, 500, WeightingMethod.MDABW) > webm
        assert eb > mean_of(report, 2, 500, WeightingMethod.UNWEIGHTED)

    @pytest.mark.asyncio
    async def test_nonlinear_scenarios(self):
        config = StudyConfig(
            scenarios=[3, 4], sample_sizes=[500, 1000], replicates=100, master_seed=3,
            estimator=Estimator.BROADCASTED, broadcast=BroadcastOptions(rank=3, restarts=2),
        )
        report = await run_study(config)
        for scenario_id in (3, 4):
            for n in (500, 1000):
                webm = mean_of(report, scenario_id, n, WeightingMethod.WEBM)
                others = [mean_of(report, scenario_id, n, m) for m in ALL_METHODS if m != WeightingMethod.WEBM]
                assert all(webm <= other for other in others if other is not None)

    @pytest.mark.asyncio
    async def test_high_dimensional_screening(self):
        config = StudyConfig(
            scenarios=[5, 6], sample_sizes=[500], replicates=100, master_seed=4,
            methods=[WeightingMethod.UNWEIGHTED, WeightingMethod.WEBM],
        )
        report = await run_study(config)
        for scenario_id in (5, 6):
            gap = mean_of(report, scenario_id, 500, WeightingMethod.UNWEIGHTED) \
                - mean_of(report, scenario_id, 500, WeightingMethod.WEBM)
            assert gap >= 0.05


class TestTuningOnInteractionBasis:

    def test_tuning_succeeds_when_default_grid_is_infeasible(self):
        """Scenario 2 with interactions at n = 500 cannot reach the default grid's largest delta."""
        dataset, truth = generate_scenario(2, 500, seed=7)
        ms = build_moment_system(dataset, truth.basis)
        tuning = tune_delta(ms)
        assert tuning.best.converged
        if tuning.grid_extended:
            assert tuning.best.weim >= tuning.minimum_weim
        assert tuning.best.weim <= tuning.delta_star + 1e-8


class TestScreeningRecovery:

    def test_confounders_ranked_first(self):
        """X_1..X_5 drive the treatment; they should fill the top five ranks."""
        hits = 0
        for replicate in range(100):
            dataset, _ = generate_scenario(5, 500, seed=[5, replicate])
            ranking = rank_covariates(dataset).ranking
            hits += set(ranking[:5]) == set(range(5))
        assert hits >= 90


class TestDualProperties:
    """Gradients and primal recovery on small random systems."""

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        step = 1e-6
        for _ in range(100):
            n, k = rng.integers(4, 11), rng.integers(1, 4)
            ms = MomentSystem.from_matrix(rng.normal(size=(n, k)))
            theta = rng.normal(scale=0.5, size=k)
            delta = float(rng.uniform(0.01, 0.5))
            for objective in (dual_objective, normalized_dual_objective):
                _, gradient = objective(theta, ms, delta, 0.0)
                numeric = np.array([
                    (objective(theta + step * e, ms, delta, 0.0)[0] - objective(theta - step * e, ms, delta, 0.0)[0])
                    / (2 * step)
                    for e in np.eye(k)
                ])
                np.testing.assert_allclose(gradient, numeric, atol=1e-6)

    def test_primal_recovery(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n, k = rng.integers(6, 11), rng.integers(1, 4)
            ms = MomentSystem.from_matrix(rng.normal(size=(n, k)) + 0.2)
            cfg = BalanceConfig(delta=0.05, dual_form=DualForm.CONJUGATE, normalize_weights=False)
            result = solve_weights(ms, cfg)
            np.testing.assert_allclose(np.log(result.weights) + 1.0, ms.matrix @ result.theta, atol=1e-10)


class TestOracleIdentities:
    """Stabilized oracle weights at n = 10^4."""

    @pytest.fixture(scope="class")
    def large_sample(self):
        dataset, truth = generate_scenario(1, 10_000, seed=99)
        return dataset, oracle_weights(dataset, truth)

    def test_mean_one(self, large_sample):
        _, weights = large_sample
        assert abs(weights.mean() - 1.0) <= 0.05

    def test_moment_factorization(self, large_sample):
        dataset, weights = large_sample
        vec_t = dataset.treatments.reshape(dataset.n, -1)
        pairs = [(a, j) for a in range(vec_t.shape[1]) for j in range(3)][:10]
        for a, j in pairs:
            u, v = vec_t[:, a], dataset.covariates[:, j]
            assert abs(np.mean(weights * u * v) - u.mean() * v.mean()) < 0.05

    def test_weighted_objective_identity(self):
        check = weighted_objective_check(1, 100_000, seed=17)
        assert check.relative_gap < 0.03


class TestLinearEstimatorProperties:
    """Oracle-weighted least squares on scenario 1."""

    def test_error_shrinks_with_n(self):
        mean_error = {}
        for n in (500, 2000):
            errors = []
            for replicate in range(100):
                dataset, truth = generate_scenario(1, n, seed=[19, n, replicate])
                model = fit_linear_effect(dataset, oracle_weights(dataset, truth))
                errors.append(np.linalg.norm(model.coefficient_matrix - truth.true_B))
            mean_error[n] = np.mean(errors)
        assert mean_error[2000] < mean_error[500]

    def test_sandwich_tracks_monte_carlo_spread(self):
        """Sandwich standard errors within 25% of the replicate spread of beta-hat."""
        draws, standard_errors = [], []
        for replicate in range(200):
            dataset, truth = generate_scenario(1, 2000, seed=[23, replicate])
            weights = oracle_weights(dataset, truth)
            model = fit_linear_effect(dataset, weights)
            draws.append(model.coefficients)
            standard_errors.append(sandwich_variance(model, dataset, weights).standard_errors)
        spread = np.std(draws, axis=0, ddof=1)[1:]
        mean_se = np.mean(standard_errors, axis=0)[1:]
        np.testing.assert_allclose(mean_se, spread, rtol=0.25)


class TestBroadcastedFitTrend:

    def test_in_sample_error_decreases_with_n(self):
        """Mean in-sample error against the true surface at fixed D and R."""
        opts = BroadcastOptions(rank=3, restarts=2)
        errors = []
        for n in (250, 500, 1000, 2000):
            values = []
            for replicate in range(10):
                dataset, truth = generate_scenario(3, n, seed=[37, n, replicate])
                model = fit_broadcasted(dataset, oracle_weights(dataset, truth), opts=opts)
                values.append(np.mean((model.fitted_values - true_surface(dataset.treatments, truth)) ** 2))
            errors.append(np.mean(values))
        assert np.all(np.diff(errors) < 0)


class TestWeightRate:

    def test_log_log_slope(self):
        """Mean squared weight error shrinks at the parametric rate."""
        ns = [250, 500, 1000, 2000]
        errors = []
        for n in ns:
            values = []
            for replicate in range(20):
                dataset, truth = generate_scenario(1, n, seed=[7, n, replicate])
                estimated = estimate_weights(dataset, BalancePipelineConfig(basis=truth.basis))
                values.append(weight_error(estimated.weights, oracle_weights(dataset, truth)))
            errors.append(np.mean(values))
        assert np.all(np.diff(errors) < 0)
        assert -1.4 <= log_log_slope(ns, errors) <= -0.6


class TestBootstrapCoverage:

    @pytest.mark.asyncio
    async def test_percentile_intervals_cover_truth(self):
        """Delta is tuned once per sample and held fixed across resamples."""
        covered = []
        for repetition in range(50):
            dataset, truth = generate_scenario(1, 500, seed=[11, repetition])
            ms = build_moment_system(dataset, truth.basis)
            delta_star = tune_delta(ms).delta_star
            pipeline = BalancePipelineConfig(
                basis=truth.basis, tune_delta=False, balance=BalanceConfig(delta=delta_star)
            )
            summary = await bootstrap_ci(dataset, pipeline, replicates=200, level=0.95, seed=repetition)
            entries = summary.intervals[1:]
            true_entries = truth.true_B.ravel()
            covered.append([i.lower <= b <= i.upper for i, b in zip(entries, true_entries)])
        rates = np.mean(covered, axis=0)
        assert rates.mean() >= 0.85
        assert np.all(rates >= 0.8)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-m", "slow"])
