"""Ghost-relaxed direction subproblem.

Given first-order data (g, c, J) at a point, the linearized constraints are
relaxed by

    kappa = (1 - lam) * max_i (c_i)_+  +  lam * min_{|d|_inf <= rho} max_i (c_i + J_i d)_+

and the direction solves

    min_d  g'd + tau/2 |d|^2   s.t.  c + J d <= kappa,  |d|_inf <= beta.

Since rho < beta the minimizer of the inner problem is feasible for the
direction problem, so the latter is never empty.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import INFEASIBLE, KKT_TOL, OPTIMAL, QpSpec, single_row_core, solve_minmax, solve_qp
from .problem import SubproblemData


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GhostConfig:
    tau: float = 1.0
    beta: float = 10.0
    rho: float = 0.8
    lam: float = 0.5

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0 < self.rho < self.beta:
            raise ConfigError(f"invariant violated: 0 < rho < beta (rho={self.rho}, beta={self.beta})")
        if not 0 < self.lam < 1:
            raise ConfigError(f"invariant violated: 0 < lambda < 1 (lambda={self.lam})")


@dataclass
class KappaResult:
    kappa: float
    inner_min: float
    witness: np.ndarray
    max_viol: float  # max_i (c_i)_+


@dataclass
class DirectionSolution:
    d: np.ndarray
    mu: np.ndarray
    box_mult: np.ndarray
    kappa: float
    theta: float
    status: str
    primal_res: float = 0.0
    dual_res: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def compute_kappa(data: SubproblemData, cfg: GhostConfig, tol: float = KKT_TOL) -> KappaResult:
    if data.m == 0:
        return KappaResult(0.0, 0.0, np.zeros(data.n), 0.0)
    max_viol = max(0.0, float(np.max(data.c)))
    if max_viol == 0.0:
        # d = 0 already attains the least possible value 0
        return KappaResult(0.0, 0.0, np.zeros(data.n), 0.0)
    inner, witness = solve_minmax(data.c, data.J, cfg.rho, tol)
    if inner > max_viol:
        # d = 0 is admissible in the inner problem and attains max_viol
        inner, witness = max_viol, np.zeros(data.n)
    kappa = (1.0 - cfg.lam) * max_viol + cfg.lam * inner
    return KappaResult(kappa, inner, witness, max_viol)


def _solve_direction_small(data: SubproblemData, cfg: GhostConfig, tol: float) -> DirectionSolution:
    """m <= 1: closed-form relaxation and the exact single-row QP."""
    g, tau = data.g, cfg.tau
    hi = np.full(data.n, cfg.beta)
    lo = -hi
    if data.m == 0:
        d = np.clip(-g / tau, lo, hi)
        box_mult = g + tau * d
        box_mult[np.abs(d) < cfg.beta] = 0.0
        return DirectionSolution(d, np.zeros(0), box_mult, 0.0, 0.0, OPTIMAL)
    a = data.J[0]
    c0 = float(data.c[0])
    max_viol = max(c0, 0.0)
    inner = min(max(c0 - cfg.rho * float(np.abs(a).sum()), 0.0), max_viol)
    kappa = (1.0 - cfg.lam) * max_viol + cfg.lam * inner
    r = kappa - c0
    d, mu, feasible = single_row_core(g, tau, a, r, lo, hi)
    box_mult = g + tau * d + mu * a
    box_mult[np.abs(d) < cfg.beta] = 0.0
    prim = max(float(a @ d) - r, 0.0)
    ok = feasible and prim <= tol * (1.0 + abs(r))
    return DirectionSolution(d, np.array([mu]), box_mult, kappa, max_viol - kappa,
                             OPTIMAL if ok else INFEASIBLE, prim, 0.0)


def solve_direction(data: SubproblemData, cfg: GhostConfig, tol: float = KKT_TOL) -> DirectionSolution:
    if data.m <= 1:
        return _solve_direction_small(data, cfg, tol)
    kr = compute_kappa(data, cfg, tol)
    spec = QpSpec.boxed(data.g, cfg.tau, data.J, kr.kappa - data.c, cfg.beta)
    sol = solve_qp(spec, tol)
    theta = kr.max_viol - kr.kappa
    return DirectionSolution(sol.d, sol.mu, sol.box_mult, kr.kappa, theta, sol.status,
                             sol.primal_res, sol.dual_res)


def holder_ratio(direction, points: np.ndarray, radius: float, rng: np.random.Generator) -> float:
    """Largest |d(x) - d(y)| / |x - y|^(1/2) over random nearby pairs.

    ``direction`` maps a point to its (exact) direction.  Monitored only.
    """
    worst = 0.0
    for x in points:
        y = x + rng.uniform(-radius, radius, size=x.shape)
        gap = float(np.linalg.norm(x - y))
        if gap == 0:
            continue
        worst = max(worst, float(np.linalg.norm(direction(x) - direction(y))) / np.sqrt(gap))
    return worst
