"""Dense convex solvers for the direction subproblem and the relaxation LP.

``solve_qp`` handles

    min_d  q'd + tau/2 |d|^2   s.t.  A d <= b,  lower <= d <= upper

with an OSQP-style ADMM iteration followed by a primal-dual active-set
polish.  Single-row instances (the common case in practice) are solved
exactly by a breakpoint sweep over the row multiplier, and instances with a
few rows and a slack box by enumerating row active sets.

Multiplier conventions: ``mu >= 0`` for the rows, and ``box_mult`` is the
signed box multiplier with stationarity

    q + tau d + A' mu - box_mult = 0,

so ``box_mult[j] > 0`` when ``d[j]`` sits on its lower bound and ``< 0`` on
its upper bound.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"

KKT_TOL = 1e-8
MAX_ITERATIONS = 20000


@dataclass
class QpSpec:
    q: np.ndarray
    tau: float
    A: np.ndarray
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        n = self.q.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (n,)).copy()
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError(f"A has {self.A.shape[0]} rows but b has {self.b.shape[0]} entries")
        if np.any(self.lower > self.upper):
            raise ValueError("lower must not exceed upper")

    @classmethod
    def boxed(cls, q, tau, A, b, bound) -> "QpSpec":
        q = np.asarray(q, dtype=float)
        return cls(q, tau, A, b, -bound * np.ones_like(q), bound * np.ones_like(q))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def objective(self, d: np.ndarray) -> float:
        return float(self.q @ d + 0.5 * self.tau * (d @ d))


@dataclass
class QpSolution:
    d: np.ndarray
    mu: np.ndarray
    box_mult: np.ndarray
    status: str
    primal_res: float
    dual_res: float
    comp_res: float = 0.0
    iterations: int = 0
    certificate: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(spec: QpSpec, d, mu, box_mult) -> tuple[float, float, float]:
    """(primal, dual, complementarity) residuals, all in the infinity norm."""
    Ad = spec.A @ d
    slack = spec.b - Ad
    prim = max(
        float(np.max(-slack, initial=0.0)),
        float(np.max(spec.lower - d, initial=0.0)),
        float(np.max(d - spec.upper, initial=0.0)),
    )
    stat = spec.q + spec.tau * d + spec.A.T @ mu - box_mult
    dual = max(float(np.max(np.abs(stat), initial=0.0)), float(np.max(-mu, initial=0.0)))
    lo_gap = np.where(box_mult > 0, d - spec.lower, 0.0)
    hi_gap = np.where(box_mult < 0, spec.upper - d, 0.0)
    comp = max(
        float(np.max(np.abs(mu * slack), initial=0.0)),
        float(np.max(np.abs(box_mult * lo_gap), initial=0.0)),
        float(np.max(np.abs(box_mult * hi_gap), initial=0.0)),
    )
    return prim, dual, comp


def _finish(spec, d, mu, box_mult, tol, iterations, status=None) -> QpSolution:
    prim, dual, comp = kkt_residuals(spec, d, mu, box_mult)
    if status is None:
        status = OPTIMAL if max(prim, dual, comp) <= tol else MAX_ITER
    return QpSolution(d, mu, box_mult, status, prim, dual, comp, iterations)


# ---------------------------------------------------------------- exact paths


def _solve_box_only(spec: QpSpec, tol: float) -> QpSolution:
    d = np.clip(-spec.q / spec.tau, spec.lower, spec.upper)
    box_mult = spec.q + spec.tau * d
    box_mult[(d > spec.lower) & (d < spec.upper)] = 0.0
    return _finish(spec, d, np.zeros(0), box_mult, tol, 0)


SWEEP_MIN_N = 48


def single_row_core(q, tau, a, r, lo, hi):
    """Exact minimizer of q'd + tau/2|d|^2 over {a'd <= r} and the box.

    Returns ``(d, mu, feasible)``.  d(mu) = clip(-(q + mu a)/tau) makes
    a'd(mu) continuous, nonincreasing and piecewise linear in mu, so the
    root of a'd(mu) = r is located between consecutive breakpoints and
    interpolated exactly.
    """
    d = np.clip(-q / tau, lo, hi)
    phi0 = float(a @ d)
    if phi0 <= r:
        return d, 0.0, True
    nz = a != 0
    an, qn = a[nz], q[nz]
    t_lo = (-tau * lo[nz] - qn) / an
    t_hi = (-tau * hi[nz] - qn) / an
    if an.shape[0] < SWEEP_MIN_N:
        t = np.concatenate([t_lo, t_hi])
        t = np.sort(t[t > 0])
        D = np.clip(-(q[:, None] + a[:, None] * t[None, :]) / tau, lo[:, None], hi[:, None])
        phis = a @ D
    else:
        # O(n log n) sweep over slope changes
        start = np.minimum(t_lo, t_hi)
        end = np.maximum(t_lo, t_hi)
        w = an * an / tau
        slope0 = -float(w[(start <= 0) & (end > 0)].sum())
        t = np.concatenate([start, end])
        dslope = np.concatenate([-w, w])
        keep = t > 0
        t, dslope = t[keep], dslope[keep]
        order = np.argsort(t, kind="stable")
        t, dslope = t[order], dslope[order]
        seg_slope = np.concatenate([[slope0], slope0 + np.cumsum(dslope)[:-1]])
        seg_start = np.concatenate([[0.0], t[:-1]])
        phis = phi0 + np.cumsum(seg_slope * (t - seg_start))
    hit = np.nonzero(phis <= r)[0]
    if hit.size == 0:
        mu = float(t[-1]) if t.size else 0.0
        d = np.clip(-(q + mu * a) / tau, lo, hi)
        return d, mu, bool(a @ d <= r + 1e-12 * (1.0 + abs(r)))
    i = int(hit[0])
    t0, p0 = (0.0, phi0) if i == 0 else (float(t[i - 1]), float(phis[i - 1]))
    t1, p1 = float(t[i]), float(phis[i])
    mu = t0 + (p0 - r) * (t1 - t0) / (p0 - p1) if p0 > p1 else t1
    d = np.clip(-(q + mu * a) / tau, lo, hi)
    free = (d > lo) & (d < hi)
    curv = float(a[free] @ a[free]) / tau
    if curv > 0:
        mu = max(mu + (float(a @ d) - r) / curv, 0.0)
        d = np.clip(-(q + mu * a) / tau, lo, hi)
    return d, mu, True


def _solve_single_row(spec: QpSpec, tol: float) -> QpSolution:
    q, tau, lo, hi = spec.q, spec.tau, spec.lower, spec.upper
    a, r = spec.A[0], float(spec.b[0])
    d, mu, feasible = single_row_core(q, tau, a, r, lo, hi)
    if not feasible:
        y = np.concatenate([[1.0], -a])
        phi_min = float(np.sum(np.where(a > 0, a * lo, a * hi)))
        return QpSolution(d, np.array([mu]), np.zeros_like(q), INFEASIBLE, phi_min - r, np.inf,
                          certificate=y / np.max(np.abs(y)))
    box_mult = q + tau * d + a * mu
    box_mult[(d > lo) & (d < hi)] = 0.0
    return _finish(spec, d, np.array([mu]), box_mult, tol, 0)


ENUM_MAX_ROWS = 4


def _solve_few_rows(spec: QpSpec, tol: float) -> Optional[QpSolution]:
    """Exact solution by row active-set enumeration, or None when the box binds."""
    q, tau, A, b, lo, hi = spec.q, spec.tau, spec.A, spec.b, spec.lower, spec.upper
    none = np.zeros(spec.n, dtype=bool)
    for mask in sorted(range(1 << spec.k), key=lambda v: bin(v).count("1")):
        rows = np.array([(mask >> i) & 1 for i in range(spec.k)], dtype=bool)
        d, mu, _ = _kkt_solve(tau, q, A, b, lo, hi, rows, none, none)
        if np.any(mu < -tol) or np.any(A @ d - b > tol * (1.0 + np.abs(b))):
            continue
        if np.any(d <= lo) or np.any(d >= hi):
            continue
        sol = _finish(spec, d, np.maximum(mu, 0.0), np.zeros(spec.n), tol, 0)
        if sol.ok:
            return sol
    return None


# ---------------------------------------------------------------- ADMM + polish


def _kkt_solve(tau, q, A, b, lo, hi, rows, at_lo, at_hi):
    """Solve the equality-constrained QP for a fixed active set."""
    n = q.shape[0]
    x = np.zeros(n)
    x[at_lo] = lo[at_lo]
    x[at_hi] = hi[at_hi]
    fixed = at_lo | at_hi
    free = ~fixed
    AR = A[rows]
    ARF = AR[:, free]
    rhs_rows = b[rows] - AR[:, fixed] @ x[fixed]
    nf, kr = int(free.sum()), int(rows.sum())
    K = np.zeros((nf + kr, nf + kr))
    K[:nf, :nf] = tau * np.eye(nf)
    K[:nf, nf:] = ARF.T
    K[nf:, :nf] = ARF
    rhs = np.concatenate([-q[free], rhs_rows])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x[free] = sol[:nf]
    mu = np.zeros(A.shape[0])
    mu[rows] = sol[nf:]
    box_mult = q + tau * x + A.T @ mu
    box_mult[free] = 0.0
    return x, mu, box_mult


def _polish(spec: QpSpec, x, mu, box_mult, max_rounds: int = 30):
    """Primal-dual active-set iterations seeded by an approximate solution."""
    q, tau, A, b, lo, hi = spec.q, spec.tau, spec.A, spec.b, spec.lower, spec.upper
    cst = max(tau, 1.0)
    seen = set()
    for _ in range(max_rounds):
        rows = mu + cst * (A @ x - b) > 0
        at_lo = box_mult + cst * (lo - x) > 0
        at_hi = -box_mult + cst * (x - hi) > 0
        both = at_lo & at_hi
        if both.any():
            at_lo = at_lo & ~(both & (box_mult < 0))
            at_hi = at_hi & ~(both & (box_mult >= 0))
        key = (rows.tobytes(), at_lo.tobytes(), at_hi.tobytes())
        if key in seen:
            break
        seen.add(key)
        x, mu, box_mult = _kkt_solve(tau, q, A, b, lo, hi, rows, at_lo, at_hi)
    return x, mu, box_mult


def _admm(spec: QpSpec, tol: float, max_iter: int) -> QpSolution:
    n, k = spec.n, spec.k
    M = np.vstack([spec.A, np.eye(n)])
    lo = np.concatenate([np.full(k, -np.inf), spec.lower])
    hi = np.concatenate([spec.b, spec.upper])
    q, tau = spec.q, spec.tau
    sigma, alpha, rho = 1e-6, 1.6, 0.1
    MtM = M.T @ M

    def factor(r):
        return linalg.cho_factor((tau + sigma) * np.eye(n) + r * MtM)

    fac = factor(rho)
    x = np.zeros(n)
    z = np.clip(M @ x, lo, hi)
    y = np.zeros(k + n)
    check = 25
    polished_keys = set()
    best = None
    scale = 1.0 + float(np.max(np.abs(q), initial=0.0))
    eps_inf = 1e-7
    for it in range(1, max_iter + 1):
        xt = linalg.cho_solve(fac, sigma * x - q + M.T @ (rho * z - y))
        zt = M @ xt
        x = alpha * xt + (1 - alpha) * x
        zr = alpha * zt + (1 - alpha) * z
        z_new = np.clip(zr + y / rho, lo, hi)
        y_new = y + rho * (zr - z_new)
        dy = y_new - y
        z, y = z_new, y_new
        if it % check and it != max_iter:
            continue
        Mx = M @ x
        prim = float(np.max(np.abs(Mx - z)))
        Mty = M.T @ y
        dual = float(np.max(np.abs(tau * x + q + Mty)))

        # primal infeasibility certificate
        ndy = float(np.max(np.abs(dy)))
        if ndy > 1e-12:
            bad_lo = np.isinf(lo) & (dy < -eps_inf * ndy)
            bad_hi = np.isinf(hi) & (dy > eps_inf * ndy)
            if not (bad_lo.any() or bad_hi.any()):
                support = (np.where(dy > 0, np.where(np.isinf(hi), 0.0, hi) * dy, 0.0)
                           + np.where(dy < 0, np.where(np.isinf(lo), 0.0, lo) * dy, 0.0)).sum()
                if (np.max(np.abs(M.T @ dy)) <= eps_inf * ndy and support < -eps_inf * ndy):
                    cert = dy / ndy
                    return QpSolution(x, np.maximum(y[:k], 0), -y[k:], INFEASIBLE, prim, dual,
                                      iterations=it, certificate=cert)

        if prim < 1e-3 * scale and dual < 1e-3 * scale:
            mu0, bm0 = np.maximum(y[:k], 0.0), -y[k:]
            key = (np.sign(np.round(y, 6)).tobytes(),)
            if key not in polished_keys:
                polished_keys.add(key)
                xp, mup, bmp = _polish(spec, x.copy(), mu0, bm0)
                sol = _finish(spec, xp, mup, bmp, tol, it)
                if sol.ok:
                    return sol
            cand = _finish(spec, x.copy(), mu0, bm0, tol, it)
            if cand.ok:
                return cand
            if best is None or max(cand.primal_res, cand.dual_res) < max(best.primal_res, best.dual_res):
                best = cand

        # step-size adaptation
        num = prim / max(float(np.max(np.abs(Mx))), float(np.max(np.abs(z))), 1e-12)
        den = dual / max(float(np.max(np.abs(tau * x))), float(np.max(np.abs(Mty))),
                         float(np.max(np.abs(q), initial=0.0)), 1e-12)
        if num > 0 and den > 0:
            new_rho = float(np.clip(rho * np.sqrt(num / den), 1e-6, 1e6))
            if new_rho > 5 * rho or new_rho < 0.2 * rho:
                rho = new_rho
                fac = factor(rho)
    if best is None:
        best = _finish(spec, x, np.maximum(y[:k], 0.0), -y[k:], tol, max_iter)
    best.status = MAX_ITER if not best.ok else OPTIMAL
    return best


def solve_qp(spec: QpSpec, tol: float = KKT_TOL, max_iter: int = MAX_ITERATIONS,
             method: str = "auto") -> QpSolution:
    """Solve the box-and-inequality QP to KKT tolerance ``tol``.

    ``method`` is ``"auto"`` (exact paths for at most ``ENUM_MAX_ROWS`` rows
    when tau > 0, ADMM otherwise) or ``"admm"``.
    """
    if method not in ("auto", "admm"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto" and spec.tau > 0:
        if spec.k == 0:
            return _solve_box_only(spec, tol)
        if spec.k == 1:
            return _solve_single_row(spec, tol)
        if spec.k <= ENUM_MAX_ROWS:
            sol = _solve_few_rows(spec, tol)
            if sol is not None:
                return sol
    return _admm(spec, tol, max_iter)


# ---------------------------------------------------------------- min-max LP


def solve_minmax(c, J, rho: float, tol: float = KKT_TOL) -> tuple[float, np.ndarray]:
    """Optimal value and a witness of  min_{|d|_inf <= rho} max_i (c_i + J_i d)_+."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    c = np.asarray(c, dtype=float).reshape(-1)
    m = c.shape[0]
    J = np.asarray(J, dtype=float).reshape(m, -1)
    n = J.shape[1]
    if m == 0:
        return 0.0, np.zeros(n)
    if m == 1:
        w = -rho * np.sign(J[0])
    else:
        # variables (d, t): min t  s.t.  J d - t <= -c
        cost = np.zeros(n + 1)
        cost[-1] = 1.0
        A_ub = np.hstack([J, -np.ones((m, 1))])
        bounds = [(-rho, rho)] * n + [(0.0, None)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.linprog(cost, A_ub=A_ub, b_ub=-c, bounds=bounds, method="highs",
                                   options={"primal_feasibility_tolerance": min(tol, 1e-7),
                                            "dual_feasibility_tolerance": min(tol, 1e-7)})
        if res.status != 0:
            raise RuntimeError(f"min-max LP failed: {res.message}")
        w = np.clip(res.x[:n], -rho, rho)
    value = max(0.0, float(np.max(c + J @ w)))
    return value, w
