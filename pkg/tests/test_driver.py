import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghostsa import driver
from ghostsa.driver import (CSV_COLUMNS, Diagnostics, Schedule, ghost_penalty, high_fidelity_direction, run,
                            schedule_gamma)
from ghostsa.ghost import ConfigError, GhostConfig
from ghostsa.mlmc import EstimatorFailure, exact_direction
from ghostsa.problem import InvalidArgument
from ghostsa.testbed import CircleToy, FiniteSupport, QuadraticAffine

CFG = GhostConfig()
QUIET = Diagnostics(cadence=100, hi_samples=256)


def test_schedule_examples():
    assert schedule_gamma(Schedule("harmonic"), 1) == 0.5
    assert schedule_gamma(Schedule("harmonic"), 9) == 0.1
    inc = Schedule("incremental", gamma1=0.5, zeta=0.001)
    assert schedule_gamma(inc, 1) == 0.5
    assert schedule_gamma(inc, 2) == pytest.approx(0.49975, abs=1e-15)
    with pytest.raises(ConfigError, match="0 < gamma1 < 1"):
        Schedule("harmonic", gamma1=1.5)
    with pytest.raises(ConfigError):
        Schedule("cosine")
    with pytest.raises(InvalidArgument):
        schedule_gamma(Schedule(), 0)


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from(["harmonic", "incremental"]), gamma1=st.floats(0.01, 0.99),
       zeta=st.floats(1e-4, 0.9))
def test_schedules_positive_and_nonincreasing(kind, gamma1, zeta):
    g = Schedule(kind, gamma1, zeta).sequence(500)
    assert np.all(g > 0) and np.all(np.diff(g) <= 0)


def test_harmonic_sums_diverge_and_squares_converge():
    g = Schedule("harmonic").sequence(1_000_000)
    assert g.sum() > 10
    # last increment of the partial sums of gamma^2 is negligible, the tail beyond is below 1/(1 + 10^6)
    assert g[-1] ** 2 < 1e-10
    assert np.sum(g[500_000:] ** 2) < 1e-6


def test_incremental_schedule_decays_like_one_over_nu():
    s = Schedule("incremental", gamma1=0.5, zeta=0.001)
    g = s.sequence(1_000_000)
    assert g.sum() > 10
    nu = np.arange(1, g.size + 1)
    # gamma_nu <= 1 / (1/gamma1 + zeta (nu-1)), so nu^2 gamma_nu^2 stays bounded and sum gamma^2 converges
    assert np.all(g <= 1.0 / (1.0 / s.gamma1 + s.zeta * (nu - 1)) * (1 + 1e-12))
    assert np.max(nu * g) <= 1.0 / s.zeta + 1.0


def test_ghost_penalty_examples():
    assert ghost_penalty(1.0, 0.0, 0.1) == 1.0
    assert ghost_penalty(1.0, 0.5, 0.1) == pytest.approx(6.0)
    with pytest.raises(InvalidArgument):
        ghost_penalty(1.0, 0.5, 0.0)


def test_high_fidelity_direction_zero_noise_is_exact(rng):
    prob = QuadraticAffine(4, 2, 0.0, seed=1)
    x = rng.normal(size=4)
    np.testing.assert_allclose(high_fidelity_direction(prob, x, 3, CFG, rng), exact_direction(prob, x, CFG).d,
                               atol=1e-9)
    with pytest.raises(InvalidArgument):
        high_fidelity_direction(prob, x, 0, CFG, rng)


def test_high_fidelity_direction_finite_support(rng):
    prob = FiniteSupport()
    x = np.array([0.2, -0.3])
    d = high_fidelity_direction(prob, x, 100_000, CFG, rng)
    np.testing.assert_allclose(d, exact_direction(prob, x, CFG).d, atol=1e-2)


def test_zero_iterations_gives_single_row(rng):
    rec = run(CircleToy(), CFG, Schedule(), 0.7, 0, QUIET, rng=rng)
    assert rec.rows == 1 and rec.status == "completed"
    assert set(CSV_COLUMNS) <= set(rec.columns)
    assert np.isnan(rec.column("gamma")[0]) and np.isfinite(rec.column("d_hi_norm")[0])


def test_update_identity_and_step_bound(rng):
    rec = run(QuadraticAffine(3, 2, 0.3, seed=2), CFG, Schedule(), 0.7, 60, QUIET, rng=rng)
    assert len(rec.snapshots) == 60
    for snap in rec.snapshots:
        assert np.array_equal(snap.x_next, snap.x + snap.gamma * snap.d_tilde)
        assert np.max(np.abs(snap.x_next - snap.x)) <= snap.step_bound * (1 + 1e-12)
    for a, b in zip(rec.snapshots, rec.snapshots[1:]):
        assert np.array_equal(a.x_next, b.x)


def test_same_seed_same_run():
    def go():
        return run(FiniteSupport(), CFG, Schedule("incremental"), 0.7, 80, QUIET, rng=np.random.default_rng(5))

    a, b = go(), go()
    for name in CSV_COLUMNS:
        np.testing.assert_array_equal(a.column(name), b.column(name))
    np.testing.assert_array_equal(a.x_final, b.x_final)


def test_zero_noise_inactive_constraints_follow_gradient_descent():
    prob = QuadraticAffine(5, 3, 0.0, seed=3, violation=-50.0)
    T = 1000
    rec = run(prob, CFG, Schedule(), 0.7, T, Diagnostics(cadence=T, hi_samples=1), rng=np.random.default_rng(0))
    x = np.zeros(5)
    for nu in range(1, T + 1):
        x = x - (1.0 / (1 + nu)) * prob.Q @ (x - prob.a)
    np.testing.assert_allclose(rec.x_final, x, atol=1e-10)
    assert rec.column("d_hi_norm")[-1] <= 1e-3
    assert np.all(rec.column("cons_max_est") < 0)


@pytest.mark.slow
def test_circle_toy_converges_from_feasible_diagonal_start():
    dists, viols = [], []
    for t in range(5):
        rec = run(CircleToy(0.1), CFG, Schedule(), 0.7, 4000, Diagnostics(cadence=4000, hi_samples=4096),
                  x1=np.array([0.3, 0.3]), rng=np.random.default_rng(100 + t))
        dists.append(np.linalg.norm(rec.x_final - CircleToy.SOLUTION))
        viols.append(max(rec.column("cons_max_est")[-1], 0.0))
    # violation shrinks like nu^-lam, about 0.01 after 4000 steps
    assert np.median(dists) <= 0.05 and np.median(viols) <= 0.05


def test_circle_toy_violation_decays_at_rate_lambda():
    # Each step removes the fraction gamma * lam of the violation, so it decays like nu^-lam.
    T = 4000
    rec = run(CircleToy(0.0), CFG, Schedule(), 0.7, T, Diagnostics(cadence=T, hi_samples=1),
              rng=np.random.default_rng(0))
    viol = rec.column("cons_max_est")
    nu = np.arange(T // 10, T + 1)
    slope = np.polyfit(np.log(nu), np.log(viol[nu]), 1)[0]
    assert slope == pytest.approx(-CFG.lam, abs=0.05)


def test_estimator_failures_are_retried(monkeypatch, rng):
    real = driver.estimate_direction
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise EstimatorFailure(0, "pooled", (1.0, 1.0), "max_iter")
        return real(*args, **kwargs)

    monkeypatch.setattr(driver, "estimate_direction", flaky)
    rec = run(CircleToy(), CFG, Schedule(), 0.7, 5, QUIET, rng=rng)
    assert rec.status == "completed" and rec.rows == 6
    assert rec.column("retries")[1] == 1 and len(rec.failures) == 1


def test_persistent_failure_aborts_with_partial_columns(monkeypatch, rng):
    real = driver.estimate_direction
    calls = {"n": 0}

    def dies_later(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 3:
            raise EstimatorFailure(0, "odd", (1.0, 1.0), "max_iter")
        return real(*args, **kwargs)

    monkeypatch.setattr(driver, "estimate_direction", dies_later)
    rec = run(CircleToy(), CFG, Schedule(), 0.7, 10, QUIET, rng=rng)
    assert rec.status == "aborted"
    assert rec.rows == 4 and len(rec.failures) == driver.MAX_RETRIES + 1
    assert all(len(v) == 4 for v in rec.columns.values())


def test_bound_guard_warns_once(caplog, rng):
    diag = Diagnostics(cadence=100, hi_samples=16, bound_guard=1e-3)
    with caplog.at_level(logging.WARNING, logger="ghostsa.driver"):
        run(CircleToy(), CFG, Schedule(), 0.7, 20, diag, rng=rng)
    assert sum("bounded region" in r.message for r in caplog.records) == 1


def test_run_rejects_bad_arguments(rng):
    with pytest.raises(InvalidArgument):
        run(CircleToy(), CFG, Schedule(), 1.0, 5, rng=rng)
    with pytest.raises(InvalidArgument):
        run(CircleToy(), CFG, Schedule(), 0.7, -1, rng=rng)
    with pytest.raises(InvalidArgument):
        run(CircleToy(), CFG, Schedule(), 0.7, 5, x1=np.zeros(3), rng=rng)
