"""Self-contained invariant suites behind ``ghostsa check``.

Each suite returns a list of :class:`CheckResult`; none of them needs the test
tree.  The pytest suite holds the independent oracles; these checks verify
internal consistency (KKT conditions, feasibility, unbiasedness, gradients).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ghost import GhostConfig, compute_kappa, solve_direction
from .kernel import QpSpec, kkt_residuals, solve_qp
from .mlmc import estimator_moments, exact_direction, expected_work
from .problem import SubproblemData
from .testbed import FiniteSupport, Layout, nn_loss_grad

SUITES = ("kernel", "estimator", "gradients")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _random_feasible_qp(rng, n_max=20, k_max=10, bound=10.0) -> QpSpec:
    n = int(rng.integers(1, n_max + 1))
    k = int(rng.integers(0, k_max + 1))
    A = rng.normal(size=(k, n))
    x0 = rng.uniform(-1, 1, size=n)
    b = A @ x0 + rng.uniform(0, 1, size=k)
    return QpSpec.boxed(rng.normal(scale=3.0, size=n), 1.0, A, b, bound)


def kernel_suite(rng, cases: int = 300) -> list[CheckResult]:
    worst = 0.0
    worst_gap = 0.0
    failures = 0
    for _ in range(cases):
        spec = _random_feasible_qp(rng)
        auto = solve_qp(spec)
        admm = solve_qp(spec, method="admm")
        if not (auto.ok and admm.ok):
            failures += 1
            continue
        worst = max(worst, *kkt_residuals(spec, auto.d, auto.mu, auto.box_mult),
                    *kkt_residuals(spec, admm.d, admm.mu, admm.box_mult))
        worst_gap = max(worst_gap, float(np.max(np.abs(auto.d - admm.d), initial=0.0)))
    results = [
        CheckResult("qp-kkt", failures == 0 and worst <= 1e-6,
                    f"{cases} random QPs, {failures} unsolved, worst KKT residual {worst:.2e}"),
        CheckResult("qp-paths-agree", worst_gap <= 1e-6,
                    f"direct vs ADMM solutions differ by at most {worst_gap:.2e}"),
    ]
    bad = 0
    for _ in range(cases):
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 6))
        beta = float(rng.uniform(0.5, 20))
        cfg = GhostConfig(float(rng.uniform(0.1, 5)), beta, float(rng.uniform(0.01, 0.99)) * beta,
                          float(rng.uniform(0.01, 0.99)))
        data = SubproblemData(rng.normal(size=n), rng.normal(scale=3, size=m), rng.normal(size=(m, n)))
        kr = compute_kappa(data, cfg)
        slack = np.max(data.c + data.J @ kr.witness) - kr.kappa
        theta = kr.max_viol - kr.kappa
        sol = solve_direction(data, cfg)
        ok = (slack <= 1e-7 * (1 + abs(kr.kappa)) and np.max(np.abs(kr.witness)) <= cfg.beta
              and -1e-9 <= theta <= cfg.lam * kr.max_viol + 1e-9 and sol.ok)
        bad += not ok
    results.append(CheckResult("ghost-always-feasible", bad == 0,
                               f"{cases} fuzzed subproblems, {bad} with infeasible witness or theta out of range"))
    return results


def estimator_suite(rng, draws: int = 20000) -> list[CheckResult]:
    problem = FiniteSupport()
    cfg = GhostConfig()
    x = np.zeros(2)
    exact = exact_direction(problem, x, cfg).d
    results = []
    for p in (0.7, 0.9):
        m = estimator_moments(problem, x, cfg, p, draws, rng)
        z = np.abs(m.mean - exact) / m.std_err
        results.append(CheckResult(f"unbiased-p{p}", bool(np.all(z <= 4.0)),
                                   f"max |mean - d(x)| / SE = {np.max(z):.2f} over {draws} draws"))
        rel = abs(m.work_mean / expected_work(p) - 1.0)
        results.append(CheckResult(f"work-p{p}", rel <= 0.02,
                                   f"mean samples {m.work_mean:.3f} vs expected {expected_work(p):.3f}"))
    m = estimator_moments(problem, x, cfg, 0.5, draws, rng, estimator="naive")
    z = np.abs(m.mean - exact) / m.std_err
    results.append(CheckResult("naive-biased", bool(np.max(z) >= 5.0),
                               f"one-sample estimator max bias {np.max(z):.1f} SE"))
    return results


def _fd_max_rel_error(params, xin, label, head, layout, loss) -> float:
    _, grad = nn_loss_grad(params, xin, label, head, layout, loss)
    fd = np.empty_like(grad)
    for i in range(params.size):
        h = 1e-6 * max(1.0, abs(params[i]))
        e = np.zeros_like(params)
        e[i] = h
        fd[i] = (nn_loss_grad(params + e, xin, label, head, layout, loss)[0]
                 - nn_loss_grad(params - e, xin, label, head, layout, loss)[0]) / (2 * h)
    return float(np.max(np.abs(fd - grad) / np.maximum(np.abs(grad), 1e-3)))


def gradients_suite(rng, cases: int = 5) -> list[CheckResult]:
    results = []
    for family, heads in (("ellipsoid", 1), ("validation", 1), ("multitask", 2)):
        layout = Layout(100, 50, heads)
        worst = 0.0
        for _ in range(cases):
            params = rng.normal(scale=0.5, size=layout.size)
            head = int(rng.integers(0, heads))
            worst = max(worst, _fd_max_rel_error(params, rng.uniform(size=100), float(rng.integers(0, 2)),
                                                 head, layout, "squared"))
        results.append(CheckResult(f"fd-{family}", worst <= 1e-5,
                                   f"{cases} random cases, worst relative error {worst:.2e}"))
    return results


def run_suite(name: str, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    if name == "kernel":
        return kernel_suite(rng)
    if name == "estimator":
        return estimator_suite(rng)
    if name == "gradients":
        return gradients_suite(rng)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")
