"""
Tests for ball-correlation screening and break-point subset selection
"""

import math

import numpy as np
import pytest

from app.core.exceptions import DegenerateDistanceError, DivergingDualError, ParameterError
from app.models.balance import BalanceConfig, BalanceResult
from app.models.dataset import Dataset
from app.services import screening
from app.services.screening import (
    ball_correlation,
    ball_profile,
    distance_matrix,
    find_break_point,
    joint_ball_counts,
    rank_covariates,
    select_subset,
)


@pytest.fixture
def driven_dataset():
    """x_1 drives a 2 x 2 treatment strongly; x_2 and x_3 are independent noise."""
    rng = np.random.default_rng(11)
    n = 60
    covariates = rng.normal(size=(n, 3))
    treatments = 2.0 * covariates[:, 0, None, None] * np.ones((2, 2)) + 0.3 * rng.normal(size=(n, 2, 2))
    return Dataset(treatments=treatments, covariates=covariates, outcomes=rng.normal(size=n))


def _naive_counts(dx: np.ndarray, dy: np.ndarray, centre: int):
    """Triple-loop ball counts around one centre."""
    n = dx.shape[0]
    cx, cy, joint = np.zeros(n, dtype=int), np.zeros(n, dtype=int), np.zeros(n, dtype=int)
    for j in range(n):
        for k in range(n):
            in_x = dx[centre, k] <= dx[centre, j]
            in_y = dy[centre, k] <= dy[centre, j]
            cx[j] += in_x
            cy[j] += in_y
            joint[j] += in_x and in_y
    return cx, cy, joint


def _naive_ball_correlation(x: np.ndarray, treatments: np.ndarray) -> float:
    dx, dy = distance_matrix(x), distance_matrix(treatments)
    n = dx.shape[0]
    xy = xx = yy = 0.0
    for i in range(n):
        cx, cy, joint = _naive_counts(dx, dy, i)
        for j in range(n):
            px, py, pxy = cx[j] / n, cy[j] / n, joint[j] / n
            xy += (pxy - px * py) ** 2
            xx += (px - px * px) ** 2
            yy += (py - py * py) ** 2
    return min(max(xy / math.sqrt(xx * yy), 0.0), 1.0)


def _planted_solver(path):
    """Replacement solver whose WEIM depends only on the number of covariates."""
    def solve(ms, cfg):
        j = ms.k2 - 1
        value = path[j - 1]
        if value is None:
            raise DivergingDualError("planted divergence")
        return BalanceResult(
            theta=np.zeros(ms.k_effective),
            weights=np.ones(ms.n),
            weim=value,
            delta_used=cfg.delta,
            imbalance=np.zeros(ms.k_effective),
            converged=True,
            effective_sample_size=float(ms.n),
        )
    return solve


class TestDistances:
    """Distance matrices and ball counts."""

    def test_frobenius_distance_for_matrices(self):
        values = np.zeros((2, 2, 2))
        values[1] = [[3.0, 0.0], [0.0, 4.0]]
        assert math.isclose(distance_matrix(values)[0, 1], 5.0)

    def test_counts_are_integers(self):
        profile = ball_profile(distance_matrix(np.array([0.0, 1.0, 3.0])))
        np.testing.assert_array_equal(profile.counts[0], [1, 2, 3])
        np.testing.assert_array_equal(joint_ball_counts(profile, profile, 0), profile.counts[0])
        assert profile.counts.dtype.kind == "i"

    def test_counts_match_triple_loop(self):
        rng = np.random.default_rng(20)
        x, treatments = rng.normal(size=20), rng.normal(size=(20, 2, 2))
        dx, dy = distance_matrix(x), distance_matrix(treatments)
        x_side, y_side = ball_profile(dx), ball_profile(dy)
        for centre in range(20):
            cx, cy, joint = _naive_counts(dx, dy, centre)
            np.testing.assert_array_equal(x_side.counts[centre], cx)
            np.testing.assert_array_equal(y_side.counts[centre], cy)
            np.testing.assert_array_equal(joint_ball_counts(x_side, y_side, centre), joint)

    def test_counts_with_ties(self):
        dx = distance_matrix(np.array([0.0, 1.0, 1.0, 2.0, 0.0]))
        for centre in range(5):
            np.testing.assert_array_equal(ball_profile(dx).counts[centre], _naive_counts(dx, dx, centre)[0])


class TestBallCorrelation:
    """Bcor between a covariate and the treatment."""

    def test_identical_variables_give_one(self):
        x = np.array([0.3, -1.2, 2.5, 0.7, -0.4, 1.9])
        assert math.isclose(ball_correlation(x, x.reshape(-1, 1, 1)), 1.0, rel_tol=1e-12)

    def test_range_and_permutation_invariance(self, driven_dataset):
        x = driven_dataset.covariates[:, 1]
        value = ball_correlation(x, driven_dataset.treatments)
        order = np.random.default_rng(0).permutation(driven_dataset.n)
        permuted = ball_correlation(x[order], driven_dataset.treatments[order])
        assert 0.0 <= value <= 1.0
        assert abs(value - permuted) < 1e-12

    def test_matches_triple_loop_reference(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=20)
        treatments = 0.5 * x[:, None, None] + rng.normal(size=(20, 2, 2))
        assert math.isclose(ball_correlation(x, treatments), _naive_ball_correlation(x, treatments), rel_tol=1e-12)

    @pytest.mark.slow
    def test_independent_inputs_look_like_permutation_null(self):
        """Observed Bcor stays below the permutation 95th percentile in at least 90% of seeds."""
        below = 0
        for seed in range(100):
            rng = np.random.default_rng([31, seed])
            x, treatments = rng.normal(size=100), rng.normal(size=(100, 2, 2))
            observed = ball_correlation(x, treatments)
            null = [ball_correlation(rng.permutation(x), treatments) for _ in range(50)]
            below += observed < np.percentile(null, 95)
        assert below >= 90

    def test_dependence_beats_noise(self, driven_dataset):
        driver = ball_correlation(driven_dataset.covariates[:, 0], driven_dataset.treatments)
        noise = ball_correlation(driven_dataset.covariates[:, 2], driven_dataset.treatments)
        assert driver > noise

    def test_constant_covariate(self, driven_dataset):
        with pytest.raises(DegenerateDistanceError):
            ball_correlation(np.ones(driven_dataset.n), driven_dataset.treatments)

    def test_too_few_observations(self):
        with pytest.raises(ParameterError):
            ball_correlation(np.array([0.0, 1.0]), np.zeros((2, 1, 1)))


class TestRanking:
    """rank_covariates."""

    def test_driver_ranked_first(self, driven_dataset):
        ranking = rank_covariates(driven_dataset)
        assert ranking.ranking[0] == 0
        assert sorted(ranking.ranking) == [0, 1, 2]

    def test_constant_covariate_ranked_last(self, driven_dataset):
        covariates = driven_dataset.covariates.copy()
        covariates[:, 0] = 1.0
        dataset = Dataset(treatments=driven_dataset.treatments, covariates=covariates, outcomes=driven_dataset.outcomes)
        ranking = rank_covariates(dataset)
        assert ranking.ranking[-1] == 0
        assert ranking.degenerate == [0]
        assert ranking.bcor_values[0] == 0.0


class TestFindBreakPoint:
    """Relative-jump rule on planted paths."""

    def test_planted_jump(self):
        assert find_break_point([0.010, 0.011, 0.012, 0.500, 0.600], factor=2.0) == 4

    def test_no_jump(self):
        assert find_break_point([0.010, 0.015, 0.019], factor=2.0) is None

    def test_first_step_never_breaks(self):
        assert find_break_point([5.0], factor=2.0) is None

    def test_compares_against_running_maximum(self):
        """A jump must exceed factor times every earlier value."""
        assert find_break_point([0.10, 0.01, 0.15, 0.35], factor=2.0) == 4

    def test_failed_step_counts_as_break(self):
        assert find_break_point([0.01, float("inf")], factor=2.0) == 2

    def test_factor_must_exceed_one(self):
        with pytest.raises(ParameterError):
            find_break_point([0.1, 0.2], factor=1.0)


class TestSelectSubset:
    """Nested-prefix growth with a planted WEIM path."""

    def test_stops_before_the_break(self, monkeypatch, driven_dataset):
        monkeypatch.setattr(screening, "solve_weights", _planted_solver([0.010, 0.012, 0.500]))
        result = select_subset(driven_dataset, BalanceConfig(delta=0.01), break_factor=2.0)
        assert result.break_step == 3
        assert result.selected_count == 2
        assert result.selected_indices == result.ranking[:2]
        assert result.weim_path == [0.010, 0.012, 0.500]

    def test_keeps_everything_without_a_break(self, monkeypatch, driven_dataset):
        monkeypatch.setattr(screening, "solve_weights", _planted_solver([0.010, 0.011, 0.012]))
        result = select_subset(driven_dataset, BalanceConfig(delta=0.01), break_factor=2.0)
        assert result.break_step is None
        assert result.selected_count == 3

    def test_divergence_after_first_step_is_a_break(self, monkeypatch, driven_dataset):
        monkeypatch.setattr(screening, "solve_weights", _planted_solver([0.010, None, 0.012]))
        result = select_subset(driven_dataset, BalanceConfig(delta=0.01), break_factor=2.0)
        assert result.break_step == 2
        assert result.selected_count == 1
        assert 2 in result.step_errors
        assert math.isinf(result.weim_path[-1])

    def test_divergence_at_first_step_propagates(self, monkeypatch, driven_dataset):
        monkeypatch.setattr(screening, "solve_weights", _planted_solver([None, 0.01, 0.01]))
        with pytest.raises(DivergingDualError):
            select_subset(driven_dataset, BalanceConfig(delta=0.01), break_factor=2.0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
