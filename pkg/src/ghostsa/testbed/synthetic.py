"""Synthetic problems with exact expectation oracles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..problem import ExactInfo, InvalidArgument, SampleBatch, StochasticProblem, SubproblemData


class _GaussianMeans:
    """Batch means drawn directly: the mean of k Gaussian perturbations is Gaussian with sd / sqrt(k)."""

    def _noisy_mean(self, x, count, rng) -> SubproblemData:
        raise NotImplementedError

    def sample_mean(self, x, count, rng):
        return self._noisy_mean(x, count, rng)

    def split_means(self, x, count, rng):
        half = count // 2
        odd = self._noisy_mean(x, count - half, rng)
        even = self._noisy_mean(x, half, rng)
        w = (count - half) / count
        pooled = SubproblemData(w * odd.g + (1 - w) * even.g, w * odd.c + (1 - w) * even.c,
                                w * odd.J + (1 - w) * even.J)
        return pooled, odd, even


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str  # quadratic_affine | finite_support | circle_toy
    n: int = 2
    m: int = 1
    noise: float = 0.1
    seed: int = 0
    # quadratic_affine: constraint value at the unconstrained minimizer
    violation: float = 0.5


class QuadraticAffine(_GaussianMeans, StochasticProblem):
    """F(x) = 1/2 (x-a)'Q(x-a), C(x) = A x - e, with Gaussian noise on every field.

    ``e`` is chosen so that C(a) = violation * 1; a positive violation makes
    the constraints bind at the solution.
    """

    def __init__(self, n: int, m: int, noise: float, seed: int = 0, violation: float = 0.5):
        rng = np.random.default_rng(seed)
        self.dim, self.num_constraints, self.noise = n, m, noise
        G = rng.normal(size=(n, n))
        self.Q = np.eye(n) + 0.5 * G @ G.T / n
        self.a = rng.uniform(-0.5, 0.5, size=n) / np.sqrt(n)
        self.A = rng.normal(size=(m, n))
        self.e = self.A @ self.a - violation

    def exact(self, x):
        r = x - self.a
        Qr = self.Q @ r
        return ExactInfo(0.5 * float(r @ Qr), self.A @ x - self.e, Qr, self.A.copy())

    def _sample(self, x, count, rng):
        info = self.exact(x)
        n, m, s = self.dim, self.num_constraints, self.noise
        g = info.grad_F + s * rng.normal(size=(count, n))
        c = info.C + s * rng.normal(size=(count, m))
        J = info.jac_C + s * rng.normal(size=(count, m, n))
        return SampleBatch(np.full(count, info.F), g, c, J)

    def _noisy_mean(self, x, count, rng):
        info = self.exact(x)
        s = self.noise / np.sqrt(count)
        n, m = self.dim, self.num_constraints
        return SubproblemData(info.grad_F + s * rng.normal(size=n), info.C + s * rng.normal(size=m),
                              info.jac_C + s * rng.normal(size=(m, n)))


class FiniteSupport(StochasticProblem):
    """Two variables, one constraint, four equally likely joint noise outcomes.

    f(x, k) = |x|^2 / 2 + a_k'x  and  c(x, k) = b_k'x + e_k.  Exact
    expectations come from averaging over the four outcomes.
    """

    A_MEAN = np.array([-1.0, -0.6])
    A_DEV = np.array([[0.5, 0.2], [-0.5, 0.2], [0.2, -0.2], [-0.2, -0.2]])
    B_MEAN = np.array([1.0, 1.0])
    B_DEV = np.array([[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1]])
    E_MEAN = 0.3
    E_DEV = np.array([0.8, -0.8, 0.5, -0.5])

    dim = 2
    num_constraints = 1

    def __init__(self, noise: float = 1.0):
        self.noise = noise
        self.a = self.A_MEAN + noise * self.A_DEV
        self.b = self.B_MEAN + noise * self.B_DEV
        self.e = self.E_MEAN + noise * self.E_DEV

    @property
    def support_size(self) -> int:
        return self.a.shape[0]

    def outcome(self, x, k):
        """(f, grad f, c, grad c) for outcome ``k``."""
        x = np.asarray(x, dtype=float)
        f = 0.5 * float(x @ x) + float(self.a[k] @ x)
        return f, x + self.a[k], np.array([self.b[k] @ x + self.e[k]]), self.b[k][None, :]

    def exact(self, x):
        outs = [self.outcome(x, k) for k in range(self.support_size)]
        return ExactInfo(
            float(np.mean([o[0] for o in outs])),
            np.mean([o[2] for o in outs], axis=0),
            np.mean([o[1] for o in outs], axis=0),
            np.mean([o[3] for o in outs], axis=0),
        )

    def _sample(self, x, count, rng):
        k = rng.integers(0, self.support_size, size=count)
        a, b, e = self.a[k], self.b[k], self.e[k]
        f = 0.5 * float(x @ x) + a @ x
        return SampleBatch(f, x[None, :] + a, (b @ x + e)[:, None], b[:, None, :], k)

    def _mean_from_counts(self, x, counts) -> SubproblemData:
        w = counts / counts.sum()
        a, b, e = w @ self.a, w @ self.b, float(w @ self.e)
        return SubproblemData(x + a, np.array([b @ x + e]), b[None, :])

    def sample_mean(self, x, count, rng):
        return self._mean_from_counts(x, rng.multinomial(count, np.full(self.support_size, 1.0 / self.support_size)))

    def split_means(self, x, count, rng):
        # per-outcome counts in each half are all the parity split depends on
        probs = np.full(self.support_size, 1.0 / self.support_size)
        odd = rng.multinomial(count - count // 2, probs)
        even = rng.multinomial(count // 2, probs)
        return (self._mean_from_counts(x, odd + even), self._mean_from_counts(x, odd),
                self._mean_from_counts(x, even))


class CircleToy(_GaussianMeans, StochasticProblem):
    """F = (x1-2)^2 + (x2-2)^2,  C = x1^2 + x2^2 - 1, Gaussian noise on both gradients.

    The solution is (1/sqrt 2, 1/sqrt 2).
    """

    dim = 2
    num_constraints = 1
    SOLUTION = np.array([1.0, 1.0]) / np.sqrt(2.0)

    def __init__(self, noise: float = 0.1):
        self.noise = noise

    def exact(self, x):
        r = x - 2.0
        return ExactInfo(float(r @ r), np.array([x @ x - 1.0]), 2.0 * r, 2.0 * x[None, :])

    def _sample(self, x, count, rng):
        info = self.exact(x)
        g = info.grad_F + self.noise * rng.normal(size=(count, 2))
        J = info.jac_C + self.noise * rng.normal(size=(count, 1, 2))
        return SampleBatch(np.full(count, info.F), g, np.tile(info.C, (count, 1)), J)

    def _noisy_mean(self, x, count, rng):
        info = self.exact(x)
        s = self.noise / np.sqrt(count)
        return SubproblemData(info.grad_F + s * rng.normal(size=2), info.C,
                              info.jac_C + s * rng.normal(size=(1, 2)))


def make_synthetic(spec: SyntheticSpec) -> StochasticProblem:
    if spec.kind == "quadratic_affine":
        return QuadraticAffine(spec.n, spec.m, spec.noise, spec.seed, spec.violation)
    if spec.kind == "finite_support":
        return FiniteSupport(spec.noise)
    if spec.kind == "circle_toy":
        return CircleToy(spec.noise)
    raise InvalidArgument(f"unknown synthetic problem kind {spec.kind!r}")
