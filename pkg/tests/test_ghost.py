import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghostsa.ghost import ConfigError, GhostConfig, compute_kappa, holder_ratio, solve_direction
from ghostsa.kernel import QpSpec, solve_qp
from ghostsa.problem import SubproblemData
from oracles import grid_minmax


def data(g, c, J):
    return SubproblemData(np.asarray(g, float), np.asarray(c, float), np.asarray(J, float))


def test_defaults():
    cfg = GhostConfig()
    assert (cfg.tau, cfg.beta, cfg.rho, cfg.lam) == (1.0, 10.0, 0.8, 0.5)


@pytest.mark.parametrize("kwargs, message", [
    (dict(rho=12.0, beta=10.0), "0 < rho < beta"),
    (dict(rho=0.0), "0 < rho < beta"),
    (dict(lam=1.0), "0 < lambda < 1"),
    (dict(tau=0.0), "tau"),
])
def test_invalid_configs(kwargs, message):
    with pytest.raises(ConfigError, match=message):
        GhostConfig(**kwargs)


def test_kappa_feasible_point():
    kr = compute_kappa(data([0, 0], [-1, -2], [[1, 0], [0, 1]]), GhostConfig())
    assert kr.kappa == 0.0 and kr.inner_min == 0.0


def test_kappa_flat_constraint():
    kr = compute_kappa(data([0], [1], [[0]]), GhostConfig())
    assert kr.inner_min == pytest.approx(1.0)
    assert kr.kappa == pytest.approx(1.0)


def test_kappa_against_grid():
    kr = compute_kappa(data([0], [1], [[2]]), GhostConfig())
    inner, _ = grid_minmax([1.0], [[2.0]], 0.8)
    assert kr.inner_min == pytest.approx(inner, abs=1e-3)
    assert kr.kappa == pytest.approx(0.5, abs=1e-8)


def test_direction_with_slack_constraint():
    sol = solve_direction(data([1, 0], [-10], [[1, 1]]), GhostConfig())
    np.testing.assert_allclose(sol.d, [-1, 0], atol=1e-10)
    np.testing.assert_allclose(sol.mu, [0], atol=1e-10)
    assert sol.theta == 0.0


def test_direction_with_relaxed_active_row():
    sol = solve_direction(data([0], [1], [[2]]), GhostConfig())
    assert sol.kappa == pytest.approx(0.5)
    np.testing.assert_allclose(sol.d, [-0.25], atol=1e-10)
    np.testing.assert_allclose(sol.mu, [0.125], atol=1e-10)
    assert sol.theta == pytest.approx(0.5)


def test_two_row_path_matches_general_solver():
    d2 = data([0.3, -0.2], [1.0, 0.5], [[2.0, 0.1], [0.0, 1.0]])
    sol = solve_direction(d2, GhostConfig())
    kr = compute_kappa(d2, GhostConfig())
    ref = solve_qp(QpSpec.boxed(d2.g, 1.0, d2.J, kr.kappa - d2.c, 10.0), method="admm")
    np.testing.assert_allclose(sol.d, ref.d, atol=1e-7)


def _random_case(rng):
    n, m = int(rng.integers(1, 8)), int(rng.integers(0, 6))
    beta = float(rng.uniform(0.5, 20))
    cfg = GhostConfig(float(rng.uniform(0.1, 5)), beta, float(rng.uniform(0.01, 0.99)) * beta,
                      float(rng.uniform(0.01, 0.99)))
    return data(rng.normal(size=n), rng.normal(scale=3, size=m), rng.normal(size=(m, n))), cfg


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_witness_feasible_and_theta_bounded(seed):
    d, cfg = _random_case(np.random.default_rng(seed))
    kr = compute_kappa(d, cfg)
    max_viol = max(0.0, float(np.max(d.c, initial=0.0)))
    if d.m:
        assert np.max(d.c + d.J @ kr.witness) <= kr.kappa + 1e-7 * (1 + kr.kappa)
    assert np.max(np.abs(kr.witness), initial=0.0) <= cfg.rho + 1e-12
    assert 0.0 <= kr.inner_min <= max_viol + 1e-12
    assert kr.kappa == pytest.approx((1 - cfg.lam) * max_viol + cfg.lam * kr.inner_min)
    sol = solve_direction(d, cfg)
    assert sol.ok
    assert -1e-12 <= sol.theta <= cfg.lam * max_viol + 1e-12
    assert np.max(np.abs(sol.d)) <= cfg.beta + 1e-8
    if d.m:
        assert np.max(d.c + d.J @ sol.d) <= sol.kappa + 1e-7


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_feasible_data_gives_zero_relaxation(seed):
    rng = np.random.default_rng(seed)
    d, cfg = _random_case(rng)
    d = data(d.g, -np.abs(d.c), d.J)
    sol = solve_direction(d, cfg)
    assert sol.kappa == 0.0 and sol.theta == 0.0
    if d.m:
        assert np.all(d.c <= 0)  # d = 0 feasible


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stronger_regularization_shortens_step(seed):
    d, cfg = _random_case(np.random.default_rng(seed))
    stiff = GhostConfig(cfg.tau * 10, cfg.beta, cfg.rho, cfg.lam)
    assert np.linalg.norm(solve_direction(d, stiff).d) <= np.linalg.norm(solve_direction(d, cfg).d) + 1e-7


def test_holder_ratio_is_finite(rng):
    from ghostsa.testbed import CircleToy

    prob, cfg = CircleToy(), GhostConfig()
    ratio = holder_ratio(lambda x: solve_direction(prob.exact(x).as_data(), cfg).d,
                         rng.uniform(-1, 1, size=(20, 2)), 0.01, rng)
    assert np.isfinite(ratio) and ratio >= 0
