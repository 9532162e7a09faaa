"""Reference optimal-transport solvers used to check the closed forms.

* :func:`solve_ot_exact` -- the transportation LP, solved by :func:`twassl.lp.lp_solve`.
* :func:`sinkhorn` -- entropic OT with log-domain Sinkhorn iterations.
* :func:`rtwd_bruteforce` -- worst-case edge weights for the robust TWD, as an LP.
* :func:`rtwd_minmax` -- the robust TWD min-max problem written as one joint LP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distances import check_simplex
from .lp import LpError, LpProblem, lp_solve
from .trees import TreeTopology

__all__ = [
    "TransportPlan",
    "SinkhornError",
    "transport_problem",
    "solve_ot_exact",
    "sinkhorn",
    "rtwd_bruteforce",
    "rtwd_minmax",
]

MAX_PLAN_ENTRIES = 4096
MARGINAL_TOL = 1e-8
SINKHORN_SMOOTHING = 1e-12


class SinkhornError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass
class TransportPlan:
    plan: np.ndarray
    value: float
    n_iter: int = 0
    residuals: list[float] = field(default_factory=list)

    def marginal_error(self, a, b) -> float:
        return float(max(np.abs(self.plan.sum(axis=1) - a).max(),
                         np.abs(self.plan.sum(axis=0) - b).max()))


def _marginals(cost, a, b):
    cost = np.asarray(cost, dtype=np.float64)
    a = check_simplex(a, name="a")
    b = check_simplex(b, name="a'")
    if cost.shape != (a.size, b.size):
        raise ValueError(f"cost has shape {cost.shape}, marginals are {a.size} and {b.size}")
    if np.any(cost < 0) or not np.all(np.isfinite(cost)):
        raise ValueError("cost must be finite and nonnegative")
    return cost, a, b


def transport_problem(cost, a, b) -> LpProblem:
    """Transportation LP over the row-major flattened plan."""
    n, m = cost.shape
    A = np.zeros((n + m, n * m))
    for i in range(n):
        A[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A[n + j, j::m] = 1.0
    return LpProblem(np.asarray(cost, dtype=np.float64).reshape(-1), A, np.concatenate([a, b]))


def solve_ot_exact(cost, a, b) -> TransportPlan:
    """Exact 1-Wasserstein transport between ``a`` and ``b`` under ``cost``."""
    cost, a, b = _marginals(cost, a, b)
    if cost.size > MAX_PLAN_ENTRIES:
        raise ValueError(f"{cost.shape} plan exceeds {MAX_PLAN_ENTRIES} entries")
    res = lp_solve(transport_problem(cost, a, b))
    plan = res.x.reshape(cost.shape)
    out = TransportPlan(plan, float((plan * cost).sum()))
    err = out.marginal_error(a, b)
    if err > MARGINAL_TOL:
        raise LpError(f"transport plan violates its marginals by {err:.3g}")
    return out


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return np.squeeze(m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True)), axis=axis)


def sinkhorn(cost, a, b, lam: float, max_iter: int = 100_000, tol: float = 1e-9) -> TransportPlan:
    """Entropic OT, ``min <P, C> + lam * sum P (log P - 1)``, in the log domain.

    Iterates on the dual potentials ``f, g`` with ``P = exp((f + g - C) / lam)``.
    Each iteration makes the column sums exact; convergence is declared when
    the largest row-sum error is at most ``tol``. The returned ``value`` is the
    plain transport cost ``<P, C>``; ``residuals`` records the L1 row-marginal
    error after every iteration.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    cost, a, b = _marginals(cost, a, b)
    a = (a + SINKHORN_SMOOTHING) / (1.0 + a.size * SINKHORN_SMOOTHING)
    b = (b + SINKHORN_SMOOTHING) / (1.0 + b.size * SINKHORN_SMOOTHING)
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    residuals: list[float] = []
    for it in range(1, max_iter + 1):
        f = lam * (log_a - _logsumexp((g[None, :] - cost) / lam, axis=1))
        g = lam * (log_b - _logsumexp((f[:, None] - cost) / lam, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / lam)
        row_err = np.abs(plan.sum(axis=1) - a)
        residuals.append(float(row_err.sum()))
        if row_err.max() <= tol:
            return TransportPlan(plan, float((plan * cost).sum()), it, residuals)
    raise SinkhornError(
        f"Sinkhorn did not converge in {max_iter} iterations (row residual {residuals[-1]:.3g})",
        residuals[-1])


def rtwd_bruteforce(T: TreeTopology, a, b) -> float:
    """Robust TWD by maximizing over edge weights ``{w >= 0 : B^T w = 1}``.

    For fixed ``a, a'`` the objective ``1/2 sum_j w_j |[B (a - a')]_j|`` is
    linear in ``w``, so the maximum is an LP over the weight polytope.
    """
    a = check_simplex(a, name="a")
    b = check_simplex(b, name="a'")
    if T.n_nodes > 64:
        raise ValueError("rtwd_bruteforce is limited to 64 nodes")
    coef = 0.5 * np.abs(T.B @ (a - b))
    res = lp_solve(LpProblem(-coef, T.B.T, np.ones(T.n_leaves)))
    return -res.value


def rtwd_minmax(T: TreeTopology, a, b) -> float:
    """Robust TWD from its original min over plans / max over weights form.

    The inner maximization ``max {g @ w : B^T w = 1, w >= 0}`` is replaced
    by its LP dual ``min {1 @ y : B y >= g}``, where ``g = sum_ij pi_ij h_ij``
    and ``h_ij`` marks the edges on the path between leaves ``i`` and ``j``.
    The result is one LP in ``(pi, y+, y-, slack)``.
    """
    a = check_simplex(a, name="a")
    b = check_simplex(b, name="a'")
    n, N = T.n_leaves, T.n_nodes
    Bm = T.B
    # path indicator for each leaf pair, columns in row-major (i, j) order
    H = (Bm[:, :, None] + Bm[:, None, :] - 2.0 * Bm[:, :, None] * Bm[:, None, :]).reshape(N, n * n)
    n_pi = n * n
    n_vars = n_pi + 2 * n + N
    A = np.zeros((2 * n + N, n_vars))
    base = transport_problem(np.zeros((n, n)), a, b)
    A[:2 * n, :n_pi] = base.A_eq
    A[2 * n:, :n_pi] = -H
    A[2 * n:, n_pi:n_pi + n] = Bm
    A[2 * n:, n_pi + n:n_pi + 2 * n] = -Bm
    A[2 * n:, n_pi + 2 * n:] = -np.eye(N)
    rhs = np.concatenate([base.b_eq, np.zeros(N)])
    c = np.zeros(n_vars)
    c[n_pi:n_pi + n] = 1.0
    c[n_pi + n:n_pi + 2 * n] = -1.0
    res = lp_solve(LpProblem(c, A, rhs))
    return 0.5 * res.value
