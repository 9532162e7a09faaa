"""Dense two-phase simplex method for small equality-form linear programs.

Solves ``min c @ x  s.t.  A @ x = b,  x >= lb`` with Bland's smallest-index
rule for both the entering and the leaving variable, so pivoting is
deterministic and cannot cycle. After the final basis is found, the basic
solution and the duals are recomputed from the original data with a dense
solve, which keeps the reported residuals near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LpProblem",
    "LpResult",
    "LpError",
    "InfeasibleError",
    "UnboundedError",
    "CyclingError",
    "lp_solve",
]

MAX_VARIABLES = 4096


class LpError(RuntimeError):
    pass


class InfeasibleError(LpError):
    pass


class UnboundedError(LpError):
    pass


class CyclingError(LpError):
    pass


@dataclass
class LpProblem:
    """``min c @ x`` subject to ``A_eq @ x = b_eq`` and ``x >= lb``."""

    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        n = self.c.size
        if self.A_eq is None:
            self.A_eq = np.zeros((0, n))
            self.b_eq = np.zeros(0)
        self.A_eq = np.asarray(self.A_eq, dtype=np.float64).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=np.float64).reshape(-1)
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=np.float64).reshape(-1)
        if self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError(f"A_eq has {self.A_eq.shape[0]} rows but b_eq has {self.b_eq.size}")
        if self.lb.size != n:
            raise ValueError(f"lb has length {self.lb.size}, expected {n}")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class LpResult:
    x: np.ndarray
    value: float
    duals: np.ndarray
    basis: list[int]
    n_pivots: int
    primal_residual: float
    dual_residual: float
    info: dict = field(default_factory=dict)


class _Tableau:
    """Rows 0..m-1 are constraints, row m is the reduced-cost row, last column is the rhs."""

    def __init__(self, T: np.ndarray, basis: list[int], max_pivots: int, tol: float):
        self.T = T
        self.basis = basis
        self.max_pivots = max_pivots
        self.tol = tol
        self.pivots = 0

    def pivot(self, r: int, j: int) -> None:
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, j] = 0.0
        T[r, j] = 1.0
        self.basis[r] = j
        self.pivots += 1
        if self.pivots > self.max_pivots:
            raise CyclingError(f"no convergence after {self.max_pivots} pivots")

    def run(self, n_cols: int) -> None:
        """Bland's rule iterations over the first ``n_cols`` columns."""
        T, tol = self.T, self.tol
        m = T.shape[0] - 1
        while True:
            candidates = np.flatnonzero(T[m, :n_cols] < -tol)
            if candidates.size == 0:
                return
            j = int(candidates[0])
            col = T[:m, j]
            rows = np.flatnonzero(col > tol)
            if rows.size == 0:
                raise UnboundedError(f"objective unbounded along column {j}")
            ratios = T[rows, -1] / col[rows]
            best = ratios.min()
            tied = rows[ratios <= best + tol * max(1.0, abs(best))]
            r = int(min(tied, key=lambda i: self.basis[i]))
            self.pivot(r, j)


def lp_solve(p: LpProblem, tol: float = 1e-11, feas_tol: float = 1e-9,
             max_pivots: int | None = None) -> LpResult:
    """Solve ``p`` exactly (up to floating point) and return the optimal vertex."""
    n = p.n_vars
    if n > MAX_VARIABLES:
        raise LpError(f"{n} variables exceeds the desk-scale cap of {MAX_VARIABLES}")
    A = p.A_eq.copy()
    b = p.b_eq - A @ p.lb
    m = A.shape[0]
    if m == 0:
        if np.any(p.c < 0):
            raise UnboundedError("negative cost on an unconstrained variable")
        x = p.lb.copy()
        return LpResult(x, float(p.c @ x), np.zeros(0), [], 0, 0.0, 0.0)
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0
    if max_pivots is None:
        max_pivots = 50 * (n + m) + 1000

    # phase 1: artificial variable per row
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    tab = _Tableau(T, list(range(n, n + m)), max_pivots, tol)
    tab.run(n)
    if -T[m, -1] > feas_tol * max(1.0, np.abs(b).max()):
        raise InfeasibleError(f"phase 1 ended with infeasibility {-T[m, -1]:.3g}")

    # drive remaining artificials out of the basis; rows where that fails are redundant
    keep = []
    for r in range(m):
        if tab.basis[r] >= n:
            nz = np.flatnonzero(np.abs(T[r, :n]) > 1e-9)
            if nz.size == 0:
                continue
            tab.pivot(r, int(nz[0]))
        keep.append(r)
    T = np.vstack([T[keep], T[m:m + 1]])
    T = np.delete(T, np.s_[n:n + m], axis=1)
    basis = [tab.basis[r] for r in keep]
    m2 = len(keep)

    # phase 2
    T[m2, :] = 0.0
    T[m2, :n] = p.c
    for r, j in enumerate(basis):
        T[m2] -= p.c[j] * T[r]
    tab2 = _Tableau(T, basis, max_pivots, tol)
    tab2.pivots = tab.pivots
    tab2.run(n)

    # recompute the vertex from the original data
    A_k, b_k = A[keep], b[keep]
    Bmat = A_k[:, basis]
    xB = np.linalg.solve(Bmat, b_k)
    y = np.zeros(n)
    y[basis] = np.maximum(xB, 0.0)
    x = p.lb + y
    duals_k = np.linalg.solve(Bmat.T, p.c[basis])
    reduced = p.c - A_k.T @ duals_k
    duals = np.zeros(m)
    duals[keep] = duals_k
    duals[flip] *= -1.0
    primal_res = float(np.abs(p.A_eq @ x - p.b_eq).max())
    dual_res = float(max(0.0, -reduced.min()))
    return LpResult(x, float(p.c @ x), duals, basis, tab2.pivots, primal_res, dual_res,
                    {"redundant_rows": [r for r in range(m) if r not in keep]})
