"""Unbiased randomized multilevel estimator of the direction d(x).

One draw picks a level N ~ Geometric(p) on {0, 1, ...}, solves the
sample-average subproblem on a pooled batch of 2^(N+1) samples and on its
two halves (split by position parity), and combines

    d_tilde = (d(pooled) - (d(odd) + d(even)) / 2) / P(N = n)  +  d(single)

where ``single`` is one fresh sample.  The telescoping sum over levels makes
E[d_tilde] equal the exact-expectation direction.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ghost import DirectionSolution, GhostConfig, solve_direction
from .problem import InvalidArgument, StochasticProblem, SubproblemData, _check_point, mean_stats

log = logging.getLogger(__name__)

LEVEL_CAP = 24


class EstimatorFailure(RuntimeError):
    def __init__(self, level: int, which: str, residuals: tuple[float, float], status: str):
        self.level = level
        self.which = which
        self.residuals = residuals
        self.status = status
        super().__init__(f"{which} subproblem at level {level} ended with status {status} "
                         f"(primal {residuals[0]:.3g}, dual {residuals[1]:.3g})")


def level_pmf(n: int, p: float) -> float:
    return p * (1.0 - p) ** n


def draw_level(rng: np.random.Generator, p: float) -> int:
    if not 0 < p <= 1:
        raise InvalidArgument(f"geometric parameter must lie in (0, 1], got {p}")
    return int(rng.geometric(p)) - 1


def expected_work(p: float) -> float:
    """Mean of 2^(N+1) + 1 under the level distribution (inf when divergent)."""
    if 2.0 * (1.0 - p) >= 1.0:
        return float("inf")
    return 2.0 * p / (2.0 * p - 1.0) + 1.0


@dataclass
class EstimatorDraw:
    level: int
    d_tilde: np.ndarray
    d_single: np.ndarray
    delta: np.ndarray
    pmf: float
    samples_used: int
    redraws: int = 0
    kappa: float = float("nan")
    theta: float = float("nan")


Solver = Callable[[SubproblemData], object]


def _direction_of(result, level: int, which: str) -> np.ndarray:
    if isinstance(result, np.ndarray):
        return result
    if not result.ok:
        raise EstimatorFailure(level, which, (result.primal_res, result.dual_res), result.status)
    return result.d


def estimate_direction(problem: StochasticProblem, x, cfg: GhostConfig, p: float,
                       rng: np.random.Generator, solver: Optional[Solver] = None,
                       level_cap: int = LEVEL_CAP) -> EstimatorDraw:
    if not 0 < p < 1:
        raise InvalidArgument(f"geometric parameter must lie in (0, 1), got {p}")
    x = _check_point(problem, x)
    if solver is None:
        def solver(data):
            return solve_direction(data, cfg)

    redraws = 0
    level = draw_level(rng, p)
    while level > level_cap:
        redraws += 1
        level = draw_level(rng, p)
    if redraws:
        log.debug("level above cap %d redrawn %d time(s)", level_cap, redraws)

    pooled, odd, even = problem.split_means(x, 2 ** (level + 1), rng)
    res_pooled = solver(pooled)
    d_pooled = _direction_of(res_pooled, level, "pooled")
    d_odd = _direction_of(solver(odd), level, "odd")
    d_even = _direction_of(solver(even), level, "even")
    single = mean_stats(problem._sample(x, 1, rng))
    d_single = _direction_of(solver(single), level, "single")

    delta = d_pooled - 0.5 * (d_odd + d_even)
    pmf = level_pmf(level, p)
    draw = EstimatorDraw(level, delta / pmf + d_single, d_single, delta, pmf,
                         2 ** (level + 1) + 1, redraws)
    if isinstance(res_pooled, DirectionSolution):
        draw.kappa, draw.theta = res_pooled.kappa, res_pooled.theta
    return draw


def naive_direction(problem: StochasticProblem, x, cfg: GhostConfig, rng: np.random.Generator) -> np.ndarray:
    """One-sample plug-in direction.  Biased in general; kept as a baseline."""
    x = _check_point(problem, x)
    sol = solve_direction(mean_stats(problem._sample(x, 1, rng)), cfg)
    return _direction_of(sol, 0, "single")


def exact_direction(problem: StochasticProblem, x, cfg: GhostConfig) -> DirectionSolution:
    info = problem.exact(np.asarray(x, dtype=float))
    if info is None:
        raise InvalidArgument(f"{type(problem).__name__} has no exact oracle")
    return solve_direction(info.as_data(), cfg)


@dataclass
class Moments:
    mean: np.ndarray
    var: np.ndarray  # per-coordinate sample variance
    cov_trace: float
    work_mean: float
    draws: int
    redraws: int = 0

    @property
    def std_err(self) -> np.ndarray:
        return np.sqrt(self.var / self.draws)


class _Accumulator:
    """Per-coordinate mean and M2 with Chan's pairwise merge."""

    def __init__(self, n: int):
        self.count = 0
        self.mean = np.zeros(n)
        self.m2 = np.zeros(n)
        self.work = 0.0
        self.redraws = 0

    def add_block(self, values: np.ndarray, work: float, redraws: int) -> None:
        k = values.shape[0]
        if k == 0:
            return
        bmean = values.mean(axis=0)
        bm2 = ((values - bmean) ** 2).sum(axis=0)
        total = self.count + k
        delta = bmean - self.mean
        self.mean = self.mean + delta * (k / total)
        self.m2 = self.m2 + bm2 + delta ** 2 * (self.count * k / total)
        self.count = total
        self.work += work
        self.redraws += redraws


BLOCK = 1000


def _run_block(args):
    problem, x, cfg, p, count, seed, kind, level_cap = args
    rng = np.random.default_rng(seed)
    out = np.empty((count, problem.dim))
    work = 0.0
    redraws = 0
    for i in range(count):
        if kind == "mlmc":
            draw = estimate_direction(problem, x, cfg, p, rng, level_cap=level_cap)
            out[i] = draw.d_tilde
            work += draw.samples_used
            redraws += draw.redraws
        else:
            out[i] = naive_direction(problem, x, cfg, rng)
            work += 1
    return out, work, redraws


def estimator_moments(problem: StochasticProblem, x, cfg: GhostConfig, p: float, draws: int,
                      rng: np.random.Generator, estimator: str = "mlmc", workers: int = 1,
                      level_cap: int = LEVEL_CAP) -> Moments:
    """Monte Carlo mean, per-coordinate variance and mean work of an estimator.

    Draws are generated in fixed blocks with seeds taken from ``rng``, so the
    result does not depend on ``workers``.
    """
    if draws < 2:
        raise InvalidArgument("need at least two draws")
    if estimator not in ("mlmc", "naive"):
        raise InvalidArgument(f"unknown estimator {estimator!r}")
    x = _check_point(problem, x)
    sizes = [BLOCK] * (draws // BLOCK) + ([draws % BLOCK] if draws % BLOCK else [])
    seeds = rng.integers(0, 2 ** 63, size=len(sizes))
    jobs = [(problem, x, cfg, p, s, int(seed), estimator, level_cap) for s, seed in zip(sizes, seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_block, jobs))
    else:
        results = [_run_block(job) for job in jobs]
    acc = _Accumulator(problem.dim)
    for values, work, redraws in results:
        acc.add_block(values, work, redraws)
    var = acc.m2 / (acc.count - 1)
    return Moments(acc.mean, var, float(var.sum()), acc.work / acc.count, acc.count, acc.redraws)
