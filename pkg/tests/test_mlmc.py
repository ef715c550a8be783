import numpy as np
import pytest
from scipy import stats

from ghostsa.ghost import DirectionSolution, GhostConfig
from ghostsa.kernel import INFEASIBLE
from ghostsa.mlmc import (EstimatorFailure, LEVEL_CAP, draw_level, estimate_direction, estimator_moments,
                          exact_direction, expected_work, level_pmf)
from ghostsa.problem import InvalidArgument
from ghostsa.testbed import CircleToy, FiniteSupport, QuadraticAffine

CFG = GhostConfig()


def test_degenerate_level_distribution():
    rng = np.random.default_rng(0)
    assert all(draw_level(rng, 1.0) == 0 for _ in range(100))


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5])
def test_invalid_level_parameter(p):
    with pytest.raises(InvalidArgument):
        draw_level(np.random.default_rng(0), p)


def test_level_frequencies_fit_geometric_pmf():
    rng = np.random.default_rng(1)
    levels = np.array([draw_level(rng, 0.5) for _ in range(100_000)])
    top = 12
    observed = np.bincount(np.minimum(levels, top), minlength=top + 1)
    probs = np.array([level_pmf(n, 0.5) for n in range(top)] + [0.5 ** (top)])
    assert stats.chisquare(observed, probs * len(levels)).pvalue > 0.01


def test_pmf_sums_to_one():
    assert sum(level_pmf(n, 0.3) for n in range(400)) == pytest.approx(1.0)


@pytest.mark.parametrize("p", [0.7, 0.8, 0.9])
def test_expected_work_closed_form(p):
    series = sum(level_pmf(n, p) * (2 ** (n + 1) + 1) for n in range(300))
    assert expected_work(p) == pytest.approx(series, rel=1e-10)
    assert expected_work(0.5) == float("inf")


@pytest.mark.parametrize("p", [0.7, 0.8, 0.9])
def test_empirical_work_matches_expectation(p):
    rng = np.random.default_rng(2)
    levels = rng.geometric(p, size=1_000_000) - 1
    levels = levels[levels <= LEVEL_CAP]
    assert np.mean(2.0 ** (levels + 1) + 1) == pytest.approx(expected_work(p), rel=0.02)


def test_draw_accounting_and_construction_identity():
    prob, rng = FiniteSupport(), np.random.default_rng(3)
    for _ in range(200):
        draw = estimate_direction(prob, np.array([0.1, 0.2]), CFG, 0.6, rng)
        assert draw.samples_used == 2 ** (draw.level + 1) + 1
        assert draw.pmf == level_pmf(draw.level, 0.6)
        np.testing.assert_array_equal(draw.d_tilde, draw.delta / draw.pmf + draw.d_single)


def test_zero_noise_returns_exact_direction():
    prob = QuadraticAffine(3, 2, noise=0.0, seed=5)
    x = np.array([0.2, -0.1, 0.4])
    exact = exact_direction(prob, x, CFG).d
    rng = np.random.default_rng(4)
    for _ in range(20):
        draw = estimate_direction(prob, x, CFG, 0.7, rng)
        np.testing.assert_allclose(draw.delta, 0.0, atol=1e-12)
        np.testing.assert_allclose(draw.d_tilde, exact, atol=1e-8)
    m = estimator_moments(prob, x, CFG, 0.7, 50, rng)
    assert m.cov_trace == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(m.mean, exact, atol=1e-8)


def test_linear_solver_cancels_correction():
    prob, rng = CircleToy(0.5), np.random.default_rng(5)
    for _ in range(50):
        draw = estimate_direction(prob, np.array([0.3, 0.3]), CFG, 0.5, rng, solver=lambda d: d.g.copy())
        np.testing.assert_allclose(draw.delta, 0.0, atol=1e-12)
        np.testing.assert_allclose(draw.d_tilde, draw.d_single, atol=1e-10)


def test_solver_failure_carries_level_and_residuals():
    def failing(d):
        return DirectionSolution(np.zeros(2), np.zeros(1), np.zeros(2), 0.0, 0.0, INFEASIBLE, 0.3, 0.1)

    with pytest.raises(EstimatorFailure) as info:
        estimate_direction(FiniteSupport(), np.zeros(2), CFG, 0.7, np.random.default_rng(0), solver=failing)
    assert info.value.level >= 0
    assert info.value.residuals == (0.3, 0.1)
    assert info.value.which == "pooled"


def test_estimator_rejects_boundary_parameter():
    with pytest.raises(InvalidArgument):
        estimate_direction(FiniteSupport(), np.zeros(2), CFG, 1.0, np.random.default_rng(0))


def test_level_cap_redraws_are_counted():
    rng = np.random.default_rng(6)
    draws = [estimate_direction(FiniteSupport(), np.zeros(2), CFG, 0.2, rng, level_cap=1) for _ in range(100)]
    assert all(d.level <= 1 for d in draws)
    assert sum(d.redraws for d in draws) > 0


@pytest.mark.slow
@pytest.mark.parametrize("problem, x", [
    (FiniteSupport(), np.array([0.0, 0.0])),
    (FiniteSupport(), np.array([0.5, -0.5])),
    (CircleToy(0.1), np.array([0.9, 0.6])),
    (QuadraticAffine(3, 1, noise=0.3, seed=1), np.array([0.1, 0.2, 0.0])),
])
def test_unbiased_within_four_standard_errors(problem, x):
    exact = exact_direction(problem, x, CFG).d
    m = estimator_moments(problem, x, CFG, 0.7, 100_000, np.random.default_rng(7))
    assert np.all(np.abs(m.mean - exact) <= 4 * m.std_err)


def test_one_sample_estimator_is_biased():
    prob, x = FiniteSupport(), np.zeros(2)
    exact = exact_direction(prob, x, CFG).d
    m = estimator_moments(prob, x, CFG, 0.5, 20_000, np.random.default_rng(8), estimator="naive")
    assert np.max(np.abs(m.mean - exact) / m.std_err) > 5


def test_higher_p_means_less_work():
    prob, x = FiniteSupport(), np.zeros(2)
    hi = estimator_moments(prob, x, CFG, 0.9, 5000, np.random.default_rng(9))
    lo = estimator_moments(prob, x, CFG, 0.5, 5000, np.random.default_rng(9))
    assert hi.work_mean < lo.work_mean


def test_moments_independent_of_worker_count():
    prob, x = FiniteSupport(), np.array([0.2, 0.1])
    a = estimator_moments(prob, x, CFG, 0.7, 2500, np.random.default_rng(10), workers=1)
    b = estimator_moments(prob, x, CFG, 0.7, 2500, np.random.default_rng(10), workers=2)
    np.testing.assert_array_equal(a.mean, b.mean)
    assert a.cov_trace == b.cov_trace and a.work_mean == b.work_mean


def test_moments_need_two_draws():
    with pytest.raises(InvalidArgument):
        estimator_moments(FiniteSupport(), np.zeros(2), CFG, 0.7, 1, np.random.default_rng(0))
