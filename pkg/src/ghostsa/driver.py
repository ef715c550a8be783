"""Stochastic approximation outer loop  x <- x + gamma * d_tilde(x)  and its diagnostics."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ghost import ConfigError, GhostConfig, solve_direction
from .mlmc import EstimatorFailure, estimate_direction
from .problem import InvalidArgument, StochasticProblem, _check_point

log = logging.getLogger(__name__)

SCHEDULE_KINDS = ("harmonic", "incremental")
MAX_RETRIES = 3

CSV_COLUMNS = ("iter", "gamma", "obj_est", "cons_max_est", "kappa", "theta", "d_tilde_norm",
               "d_hi_norm", "W_eps", "level", "samples_used", "wall_ms")


@dataclass(frozen=True)
class Schedule:
    """Diminishing step sizes.

    harmonic:     gamma_nu = 1 / (1 + nu)
    incremental:  gamma_1 = gamma1,  gamma_{nu+1} = gamma_nu (1 - zeta gamma_nu)
    """

    kind: str = "harmonic"
    gamma1: float = 0.5
    zeta: float = 0.001

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if not 0 < self.gamma1 < 1:
            raise ConfigError(f"invariant violated: 0 < gamma1 < 1 (gamma1={self.gamma1})")
        if self.kind == "incremental" and not 0 < self.zeta * self.gamma1 < 1:
            raise ConfigError(f"incremental schedule needs 0 < zeta * gamma1 < 1 (zeta={self.zeta})")

    def sequence(self, count: int) -> np.ndarray:
        """gamma_1 .. gamma_count."""
        if count < 0:
            raise InvalidArgument(f"count must be nonnegative, got {count}")
        if self.kind == "harmonic":
            return 1.0 / (2.0 + np.arange(count, dtype=float))
        out = np.empty(count)
        g = self.gamma1
        for i in range(count):
            out[i] = g
            g = g * (1.0 - self.zeta * g)
        return out


def schedule_gamma(s: Schedule, nu: int) -> float:
    if nu < 1:
        raise InvalidArgument(f"iteration index must be >= 1, got {nu}")
    if s.kind == "harmonic":
        return 1.0 / (1.0 + nu)
    return float(s.sequence(nu)[-1])


def ghost_penalty(F_val: float, cons_max_pos: float, eps: float) -> float:
    if not eps > 0:
        raise InvalidArgument(f"penalty parameter must be positive, got {eps}")
    return F_val + cons_max_pos / eps


def high_fidelity_direction(problem: StochasticProblem, x, n_samples: int, cfg: GhostConfig,
                            rng: np.random.Generator) -> np.ndarray:
    """Direction of the sample-average subproblem on one large batch."""
    if n_samples < 1:
        raise InvalidArgument(f"n_samples must be >= 1, got {n_samples}")
    x = _check_point(problem, x)
    return solve_direction(problem.sample_mean(x, int(n_samples), rng), cfg).d


@dataclass
class Snapshot:
    """Everything needed to re-check one update  x_next = x + gamma * d_tilde."""

    iter: int
    x: np.ndarray
    gamma: float
    d_tilde: np.ndarray
    x_next: np.ndarray
    step_bound: float  # gamma * (beta + |delta|_inf / pmf)


@dataclass
class RunRecord:
    columns: dict  # name -> array of length iterations + 1; row nu describes x^nu
    snapshots: list = field(default_factory=list)
    x_final: Optional[np.ndarray] = None
    status: str = "completed"  # completed | aborted
    failures: list = field(default_factory=list)  # (iter, message)

    @property
    def rows(self) -> int:
        return len(self.columns["iter"])

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]


@dataclass(frozen=True)
class Diagnostics:
    eps: float = 0.1
    cadence: int = 50
    hi_samples: int = 4096
    snapshot_every: int = 1
    bound_guard: float = 1e6
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"eps_diag must be positive, got {self.eps}")
        if self.cadence < 1 or self.hi_samples < 1 or self.snapshot_every < 1:
            raise ConfigError("diagnostic cadence, sample count and snapshot interval must be >= 1")


def _empty_columns(rows: int, exact: bool) -> dict:
    cols = {name: np.full(rows, np.nan) for name in CSV_COLUMNS}
    cols["iter"] = np.arange(rows)
    cols["wall_ms"] = np.zeros(rows)
    cols["retries"] = np.zeros(rows, dtype=int)
    cols["noise_norm"] = np.full(rows, np.nan)  # |d_tilde - d_hi| on diagnostic rows
    cols["descent_proxy"] = np.full(rows, np.nan)  # tau |d_hi|^2
    if exact:
        cols["d_exact_norm"] = np.full(rows, np.nan)
    return cols


def _truncate(cols: dict, rows: int) -> dict:
    return {k: v[:rows] for k, v in cols.items()}


def run(problem: StochasticProblem, cfg: GhostConfig, schedule: Schedule, p_geo: float,
        iterations: int, diag: Diagnostics = Diagnostics(), x1=None,
        rng: Optional[np.random.Generator] = None) -> RunRecord:
    """Run ``iterations`` updates from ``x1`` (the problem's default when omitted)."""
    if iterations < 0:
        raise InvalidArgument(f"iterations must be nonnegative, got {iterations}")
    if not 0 < p_geo < 1:
        raise InvalidArgument(f"p_geo must lie in (0, 1), got {p_geo}")
    rng = rng if rng is not None else np.random.default_rng()
    x = _check_point(problem, problem.initial_point(rng) if x1 is None else x1).copy()
    exact = problem.has_exact
    gammas = schedule.sequence(iterations)
    cols = _empty_columns(iterations + 1, exact)
    record = RunRecord(cols)
    guard_warned = False

    for nu in range(iterations + 1):
        start = time.perf_counter()
        F, C = problem.evaluate(x)
        cmax = float(np.max(C)) if C.size else 0.0
        cols["obj_est"][nu] = F
        cols["cons_max_est"][nu] = cmax
        cols["W_eps"][nu] = ghost_penalty(F, max(cmax, 0.0), diag.eps)
        is_diag = nu % diag.cadence == 0 or nu == iterations
        d_hi = None
        if is_diag:
            d_hi = high_fidelity_direction(problem, x, diag.hi_samples, cfg, rng)
            cols["d_hi_norm"][nu] = np.linalg.norm(d_hi)
            cols["descent_proxy"][nu] = cfg.tau * float(d_hi @ d_hi)
            if exact:
                d_ex = solve_direction(problem.exact(x).as_data(), cfg).d
                cols["d_exact_norm"][nu] = np.linalg.norm(d_ex)
        if nu == iterations:
            break

        draw = None
        for attempt in range(MAX_RETRIES + 1):
            try:
                draw = estimate_direction(problem, x, cfg, p_geo, rng)
                break
            except EstimatorFailure as err:
                record.failures.append((nu, str(err)))
                cols["retries"][nu] = attempt + 1
                log.warning("iteration %d: %s", nu, err)
        if draw is None:
            record.status = "aborted"
            record.columns = _truncate(cols, nu + 1)
            record.x_final = x
            return record

        gamma = float(gammas[nu])
        x_next = x + gamma * draw.d_tilde
        cols["gamma"][nu] = gamma
        cols["kappa"][nu] = draw.kappa
        cols["theta"][nu] = draw.theta
        cols["d_tilde_norm"][nu] = np.linalg.norm(draw.d_tilde)
        cols["level"][nu] = draw.level
        cols["samples_used"][nu] = draw.samples_used
        if d_hi is not None:
            cols["noise_norm"][nu] = np.linalg.norm(draw.d_tilde - d_hi)
        if nu % diag.snapshot_every == 0:
            bound = gamma * (cfg.beta + float(np.max(np.abs(draw.delta))) / draw.pmf)
            record.snapshots.append(Snapshot(nu, x, gamma, draw.d_tilde, x_next, bound))
        if diag.record_wall_time:
            cols["wall_ms"][nu] = 1e3 * (time.perf_counter() - start)
        x = x_next
        if not guard_warned and float(np.max(np.abs(x))) > diag.bound_guard:
            log.warning("iterate left the bounded region at iteration %d (|x|_inf > %g)",
                        nu + 1, diag.bound_guard)
            guard_warned = True
        if not np.all(np.isfinite(x)):
            record.status = "aborted"
            record.failures.append((nu, "iterate became non-finite"))
            record.columns = _truncate(cols, nu + 1)
            record.x_final = x
            return record

    record.x_final = x
    return record
