"""Oracle sweeps: closed forms against independent solvers and properties.

Each suite returns a :class:`SweepReport` whose rows hold the inputs, the
oracle value, the value under test and the error. A report passes iff its
largest error is at most its tolerance; for the inequality suites the error
is the size of the violation, so the tolerance is 0.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Graph, grad_check
from .distances import jeffrey_divergence, kl_divergence, total_variation, twd
from .heads import HeadConfig, dct_key_matrix, head_node
from .losses import infonce_twd_loss, simsiam_twd_loss
from .ot import rtwd_bruteforce, sinkhorn, solve_ot_exact
from .trees import (TreeTopology, build_chain_tree, build_cluster_tree, build_tv_tree,
                    shortest_path_matrix, tree_embed)

__all__ = ["SweepReport", "SUITES", "run_suite", "sweep_topologies", "unit_path_topologies",
           "random_simplex"]


@dataclass
class SweepReport:
    suite: str
    columns: list[str]
    tolerance: float
    rows: list[dict] = field(default_factory=list)
    error_column: str = "abs_err"
    elapsed: float = 0.0
    # further (column, tolerance) limits every row must meet
    extra_limits: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max((float(r[self.error_column]) for r in self.rows), default=0.0)

    def _row_ok(self, row: dict) -> bool:
        limits = {self.error_column: self.tolerance, **self.extra_limits}
        return all(float(row[col]) <= tol for col, tol in limits.items())

    @property
    def n_violations(self) -> int:
        return sum(not self._row_ok(r) for r in self.rows)

    @property
    def passed(self) -> bool:
        return bool(self.rows) and self.n_violations == 0

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} {self.suite}: {len(self.rows)} cases, max {self.error_column} "
                f"{self.max_error:.3e} (tol {self.tolerance:.0e}), {self.n_violations} violations, "
                f"{self.elapsed:.1f}s")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def random_simplex(rng: np.random.Generator, n: int, size: int | None = None) -> np.ndarray:
    return rng.dirichlet(np.ones(n), size=size)


def sweep_topologies(n_leaves=(2, 4, 8, 16), rng: np.random.Generator | None = None):
    """(name, n, topology) for the TV, cluster and chain families."""
    rng = np.random.default_rng(0) if rng is None else rng
    for n in n_leaves:
        yield "tv", n, build_tv_tree(n, 0.5)
        n_clusters = 4 if n >= 16 else min(2, n)
        yield "cluster", n, build_cluster_tree(n_clusters, n // n_clusters)
        yield "chain", n, build_chain_tree(n, rng.uniform(0.1, 1.0, size=n - 1))


def unit_path_topologies(n_leaves=(4, 8, 16), rng: np.random.Generator | None = None):
    """Topologies with ``B^T w = 1``: unit TV trees and cluster trees with split weights."""
    rng = np.random.default_rng(0) if rng is None else rng
    for n in n_leaves:
        yield "tv", n, build_tv_tree(n, 1.0)
        yield "cluster", n, build_cluster_tree(2, n // 2)
        u = float(rng.uniform(0.05, 0.95))
        yield "cluster-random", n, build_cluster_tree(2, n // 2, internal_weight=u, leaf_weight=1.0 - u)


# -- suites --------------------------------------------------------------------

def _twd_lp(trials: int, rng: np.random.Generator) -> SweepReport:
    rep = SweepReport("twd-lp", ["topology", "n_leaves", "trial", "twd", "lp_value", "abs_err"], 1e-9)
    for name, n, T in sweep_topologies(rng=rng):
        D = shortest_path_matrix(T)
        for t in range(trials):
            a, b = random_simplex(rng, n), random_simplex(rng, n)
            closed, exact = twd(T, a, b), solve_ot_exact(D, a, b).value
            rep.rows.append({"topology": name, "n_leaves": n, "trial": t, "twd": closed,
                             "lp_value": exact, "abs_err": abs(closed - exact)})
    return rep


def _rtwd_tv(trials: int, rng: np.random.Generator) -> SweepReport:
    rep = SweepReport("rtwd-tv", ["topology", "n_leaves", "trial", "rtwd", "tv", "abs_err"], 1e-7)
    for name, n, T in sweep_topologies(rng=rng):
        for t in range(trials):
            a, b = random_simplex(rng, n), random_simplex(rng, n)
            robust, tv = rtwd_bruteforce(T, a, b), total_variation(a, b)
            rep.rows.append({"topology": name, "n_leaves": n, "trial": t, "rtwd": robust,
                             "tv": tv, "abs_err": abs(robust - tv)})
    return rep


def _jd_bound(trials: int, rng: np.random.Generator) -> SweepReport:
    """``TWD^2 <= JD``, plus Pinsker on the same pairs' tree embeddings."""
    rep = SweepReport("jd-bound", ["topology", "n_leaves", "trial", "twd_sq", "jd", "violation",
                                   "pinsker_violation"], 0.0, error_column="violation",
                      extra_limits={"pinsker_violation": 0.0})
    for name, n, T in unit_path_topologies(rng=rng):
        for t in range(trials):
            a, b = random_simplex(rng, n), random_simplex(rng, n)
            w1, jd = twd(T, a, b), jeffrey_divergence(T, a, b)
            p, q = tree_embed(T, a), tree_embed(T, b)
            # the embeddings are probability vectors and their L1 distance is the TWD
            pinsker = float(np.sqrt(2.0 * kl_divergence(p, q)))
            rep.rows.append({"topology": name, "n_leaves": n, "trial": t, "twd_sq": w1 ** 2, "jd": jd,
                             "violation": max(0.0, w1 ** 2 - jd),
                             "pinsker_violation": max(0.0, w1 - pinsker)})
    return rep


def _pinsker(trials: int, rng: np.random.Generator) -> SweepReport:
    rep = SweepReport("pinsker", ["n", "trial", "l1", "sqrt_2kl", "violation"], 0.0,
                      error_column="violation")
    for n in (2, 4, 8, 16, 32):
        for t in range(trials):
            p, q = random_simplex(rng, n), random_simplex(rng, n)
            l1, bound = float(np.abs(p - q).sum()), float(np.sqrt(2.0 * kl_divergence(p, q)))
            rep.rows.append({"n": n, "trial": t, "l1": l1, "sqrt_2kl": bound,
                             "violation": max(0.0, l1 - bound)})
    return rep


def _sinkhorn(trials: int, rng: np.random.Generator) -> SweepReport:
    rep = SweepReport("sinkhorn", ["cost", "trial", "lam", "sinkhorn", "lp_value", "rel_err",
                                   "marginal_err"], 0.01, error_column="rel_err",
                      extra_limits={"marginal_err": 1e-6})
    for kind in ("euclidean", "uniform"):
        for t in range(trials):
            if kind == "euclidean":
                x, y = rng.random((8, 2)), rng.random((8, 2))
                C = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=-1)
            else:
                C = rng.random((8, 8))
            a, b = random_simplex(rng, 8), random_simplex(rng, 8)
            lam = 0.01 * float(C.mean())
            approx, exact = sinkhorn(C, a, b, lam), solve_ot_exact(C, a, b)
            rep.rows.append({"cost": kind, "trial": t, "lam": lam, "sinkhorn": approx.value,
                             "lp_value": exact.value,
                             "rel_err": abs(approx.value - exact.value) / exact.value,
                             "marginal_err": approx.marginal_error(a, b)})
    return rep


def _kink_margin(T: TreeTopology, rows: np.ndarray) -> float:
    E = rows @ T.embedding_matrix.T
    # coordinates fixed by the head (SEM block masses) are not kinks
    E = E[:, np.ptp(E, axis=0) > 1e-12]
    if E.shape[1] == 0:
        return np.inf
    return float(np.abs(E[:, None, :] - E[None, :, :])[~np.eye(len(E), dtype=bool)].min())


_GRAD_HEADS = (HeadConfig("softmax", 4), HeadConfig("sem", 4, L=2, V=2),
               HeadConfig("arcface", 4, key="dct", eta=0.5))


def _gradcheck(trials: int, rng: np.random.Generator) -> SweepReport:
    """Finite differences through head + loss; the error is the worse of the two losses."""
    rep = SweepReport("gradcheck", ["trial", "head", "infonce_err", "simsiam_err",
                                    "target_adjoint_max", "abs_err"], 1e-4)
    T = build_cluster_tree(2, 2)
    K = dct_key_matrix(4).K
    R = 3
    for t in range(trials):
        cfg = _GRAD_HEADS[t % len(_GRAD_HEADS)]
        while True:
            Z = rng.standard_normal((4, R, 4))
            probe = Graph()
            heads = [head_node(probe, cfg, probe.const(z), probe.const(K)).value for z in Z]
            # non-kink: every tree-embedded coordinate difference is bounded away from 0
            if min(_kink_margin(T, np.vstack(heads[:2])), _kink_margin(T, np.vstack(heads[2:]))) > 1e-4:
                break
        g = Graph()
        key = g.const(K)
        z1, z2 = g.leaf(Z[0], name="z1"), g.leaf(Z[1], name="z2")
        nce = infonce_twd_loss(g, head_node(g, cfg, z1, key), head_node(g, cfg, z2, key), T,
                               tau=0.5, lambda_jd=0.1)
        nce_err = max(grad_check(g, nce, z1), grad_check(g, nce, z2))

        g = Graph()
        key = g.const(K)
        o1, o2, s1, s2 = (g.leaf(z, name=n) for z, n in zip(Z, ("o1", "o2", "s1", "s2")))
        loss = simsiam_twd_loss(g, head_node(g, cfg, o1, key), head_node(g, cfg, o2, key),
                                g.stop_grad(head_node(g, cfg, s1, key)),
                                g.stop_grad(head_node(g, cfg, s2, key)), T, lambda_jd=0.1)
        ss_err = max(grad_check(g, loss, o1), grad_check(g, loss, o2))
        adj = g.backward(loss)
        target_adj = float(max(np.abs(adj[s1]).max(), np.abs(adj[s2]).max()))
        # a nonzero target adjoint is a hard failure, whatever its size
        err = max(nce_err, ss_err) if target_adj == 0.0 else float("inf")
        rep.rows.append({"trial": t, "head": cfg.label, "infonce_err": nce_err, "simsiam_err": ss_err,
                         "target_adjoint_max": target_adj, "abs_err": err})
    return rep


def _dct_orth(trials: int, rng: np.random.Generator) -> SweepReport:
    rep = SweepReport("dct-orth", ["d", "ktk_err", "kkt_err", "abs_err"], 1e-10)
    for d in range(2, 65):
        K = dct_key_matrix(d).K
        I = np.eye(d)
        a, b = float(np.abs(K.T @ K - I).max()), float(np.abs(K @ K.T - I).max())
        rep.rows.append({"d": d, "ktk_err": a, "kkt_err": b, "abs_err": max(a, b)})
    return rep


SUITES: dict[str, tuple[Callable, int]] = {
    "twd-lp": (_twd_lp, 100),
    "rtwd-tv": (_rtwd_tv, 100),
    "jd-bound": (_jd_bound, 1000),
    "pinsker": (_pinsker, 1000),
    "sinkhorn": (_sinkhorn, 50),
    "gradcheck": (_gradcheck, 100),
    "dct-orth": (_dct_orth, 1),
}


def run_suite(name: str, trials: int | None = None, seed: int = 0) -> SweepReport:
    """Run one suite; ``trials`` defaults to the suite's own count."""
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r} (choose from {', '.join(SUITES)})")
    fn, default = SUITES[name]
    start = time.perf_counter()
    report = fn(default if trials is None else trials, np.random.default_rng(seed))
    report.elapsed = time.perf_counter() - start
    return report
