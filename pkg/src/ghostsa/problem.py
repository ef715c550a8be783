"""Stochastic problem abstraction and batch statistics.

A problem exposes a sampler returning, for one joint draw of the noise,
the objective value and gradient together with the constraint values and
Jacobian.  Everything downstream only ever sees batch means of those
fields (:class:`SubproblemData`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

CHUNK = 512  # even, so position parity survives chunking


class InvalidArgument(ValueError):
    """Raised when an operation receives arguments violating its preconditions."""


@dataclass(frozen=True)
class SubproblemData:
    """Batch-mean (or exact) first-order information at one point."""

    g: np.ndarray  # (n,)
    c: np.ndarray  # (m,)
    J: np.ndarray  # (m, n)

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def m(self) -> int:
        return self.c.shape[0]


@dataclass
class SampleBatch:
    """An ordered batch of joint draws.

    Row ``j`` of every array belongs to the same draw.  Order matters: the
    multilevel estimator splits a batch by position parity.
    """

    obj_vals: np.ndarray  # (B,)
    obj_grad: np.ndarray  # (B, n)
    cons_vals: np.ndarray  # (B, m)
    cons_jac: np.ndarray  # (B, m, n)
    draw_ids: np.ndarray = field(default=None)  # (B,) int

    def __post_init__(self):
        if self.draw_ids is None:
            self.draw_ids = np.arange(len(self.obj_vals))

    def __len__(self) -> int:
        return self.obj_grad.shape[0]

    def __getitem__(self, idx) -> "SampleBatch":
        return SampleBatch(
            self.obj_vals[idx],
            self.obj_grad[idx],
            self.cons_vals[idx],
            self.cons_jac[idx],
            self.draw_ids[idx],
        )

    @classmethod
    def concat(cls, batches: Sequence["SampleBatch"]) -> "SampleBatch":
        return cls(
            np.concatenate([b.obj_vals for b in batches]),
            np.concatenate([b.obj_grad for b in batches]),
            np.concatenate([b.cons_vals for b in batches]),
            np.concatenate([b.cons_jac for b in batches]),
            np.concatenate([b.draw_ids for b in batches]),
        )


@dataclass(frozen=True)
class ExactInfo:
    F: float
    C: np.ndarray
    grad_F: np.ndarray
    jac_C: np.ndarray

    def as_data(self) -> SubproblemData:
        return SubproblemData(self.grad_F, self.C, self.jac_C)


class StochasticProblem:
    """Base class for problems  min E[f(x, xi)]  s.t.  E[c(x, zeta)] <= 0.

    Subclasses implement :meth:`_sample`.  Test problems may also implement
    :meth:`exact`; production problems only sample.
    """

    dim: int
    num_constraints: int

    def _sample(self, x: np.ndarray, count: int, rng: np.random.Generator) -> SampleBatch:
        raise NotImplementedError

    def exact(self, x: np.ndarray) -> Optional[ExactInfo]:
        """Exact expectations at ``x``, or ``None`` when unavailable."""
        return None

    @property
    def has_exact(self) -> bool:
        return type(self).exact is not StochasticProblem.exact

    def evaluate(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Deterministic (F, C) used for run diagnostics."""
        info = self.exact(x)
        if info is None:
            raise NotImplementedError(f"{type(self).__name__} has no evaluation oracle")
        return info.F, info.C

    def initial_point(self, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        return np.zeros(self.dim)

    def sample_mean(self, x: np.ndarray, count: int, rng: np.random.Generator) -> SubproblemData:
        """Mean of ``count`` fresh draws.  Override when averaging can skip per-sample rows."""
        sums = BatchSums(self.dim, self.num_constraints)
        left = count
        while left:
            size = min(CHUNK, left)
            sums.add(self._sample(x, size, rng))
            left -= size
        return sums.mean()

    def split_means(self, x: np.ndarray, count: int, rng: np.random.Generator
                    ) -> tuple[SubproblemData, SubproblemData, SubproblemData]:
        """Pooled, odd-position and even-position means of ``count`` fresh draws."""
        if count <= CHUNK:
            batch = self._sample(x, count, rng)
            return mean_stats(batch), mean_stats(batch[0::2]), mean_stats(batch[1::2])
        odd = BatchSums(self.dim, self.num_constraints)
        even = BatchSums(self.dim, self.num_constraints)
        left = count
        while left:
            size = min(CHUNK, left)  # CHUNK is even, so parity is chunk-local
            batch = self._sample(x, size, rng)
            odd.add(batch[0::2])
            even.add(batch[1::2])
            left -= size
        return odd.merged(even).mean(), odd.mean(), even.mean()


def _check_point(problem: StochasticProblem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim,):
        raise InvalidArgument(f"point has shape {x.shape}, problem dimension is {problem.dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("point has non-finite entries")
    return x


def sample_batch(problem: StochasticProblem, x, count: int, rng: np.random.Generator) -> SampleBatch:
    """Draw ``count`` independent joint samples at ``x``."""
    if count < 1:
        raise InvalidArgument(f"count must be >= 1, got {count}")
    x = _check_point(problem, x)
    return problem._sample(x, int(count), rng)


def mean_stats(batch: SampleBatch) -> SubproblemData:
    if len(batch) == 0:
        raise InvalidArgument("cannot average an empty batch")
    k = len(batch)
    if k == 1:
        return SubproblemData(batch.obj_grad[0], batch.cons_vals[0], batch.cons_jac[0])
    return SubproblemData(
        batch.obj_grad.sum(axis=0) / k,
        batch.cons_vals.sum(axis=0) / k,
        batch.cons_jac.sum(axis=0) / k,
    )


class BatchSums:
    """Running sums of sample fields, for averaging batches too large to hold."""

    def __init__(self, n: int, m: int):
        self.count = 0
        self.obj = 0.0
        self.g = np.zeros(n)
        self.c = np.zeros(m)
        self.J = np.zeros((m, n))

    def add(self, batch: SampleBatch) -> None:
        if len(batch) == 0:
            return
        self.count += len(batch)
        self.obj += float(batch.obj_vals.sum())
        self.g += batch.obj_grad.sum(axis=0)
        self.c += batch.cons_vals.sum(axis=0)
        self.J += batch.cons_jac.sum(axis=0)

    def merged(self, other: "BatchSums") -> "BatchSums":
        out = BatchSums(self.g.shape[0], self.c.shape[0])
        out.count = self.count + other.count
        out.obj = self.obj + other.obj
        out.g = self.g + other.g
        out.c = self.c + other.c
        out.J = self.J + other.J
        return out

    def mean(self) -> SubproblemData:
        if self.count == 0:
            raise InvalidArgument("cannot average an empty batch")
        k = self.count
        return SubproblemData(self.g / k, self.c / k, self.J / k)
