"""Closed-form distances between probability vectors on a tree.

Each quantity comes in two flavours: plain numpy evaluation, and a
``*_node`` builder that records the same computation on an autodiff
:class:`~twassl.autodiff.Graph` for a batch of rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node
from .trees import TopologyError, TreeTopology, tree_embed

__all__ = [
    "JD_EPS",
    "DistanceKind",
    "check_simplex",
    "twd",
    "pairwise_twd",
    "total_variation",
    "rtwd",
    "kl_divergence",
    "jeffrey_divergence",
    "leaf_jeffrey_divergence",
    "cosine_similarity",
    "twd_node",
    "pairwise_twd_node",
    "jd_node",
]

JD_EPS = 1e-12
SIMPLEX_TOL = 1e-9


def check_simplex(a, tol: float = SIMPLEX_TOL, name: str = "a") -> np.ndarray:
    """Return ``a`` as float64 after checking it is a (batch of) probability vector(s)."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(a < 0):
        raise ValueError(f"{name} has negative entries (min {a.min():.3g})")
    err = np.abs(a.sum(axis=-1) - 1.0).max()
    if err > tol:
        raise ValueError(f"{name} does not sum to one (off by {err:.3g})")
    return a


def _pair(a, b, n: int | None = None):
    a = check_simplex(a, name="a")
    b = check_simplex(b, name="a'")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if n is not None and a.shape[-1] != n:
        raise ValueError(f"expected vectors of length {n}, got {a.shape[-1]}")
    return a, b


def twd(T: TreeTopology, a, b) -> float:
    """Tree-Wasserstein distance ``||diag(w) B (a - b)||_1``."""
    a, b = _pair(a, b, T.n_leaves)
    return float(np.abs(tree_embed(T, a - b)).sum())


def pairwise_twd(T: TreeTopology, A, B=None) -> np.ndarray:
    """TWD between every row of ``A`` and every row of ``B`` (default ``A``)."""
    P = tree_embed(T, A)
    Q = P if B is None else tree_embed(T, B)
    out = np.zeros((P.shape[0], Q.shape[0]))
    tmp = np.empty_like(out)
    for k in range(P.shape[1]):
        np.subtract(P[:, k, None], Q[None, :, k], out=tmp)
        out += np.abs(tmp, out=tmp)
    return out


def total_variation(a, b) -> float:
    a, b = _pair(a, b)
    return 0.5 * float(np.abs(a - b).sum())


def rtwd(T: TreeTopology, a, b) -> float:
    """Robust TWD (worst case over unit-path edge weights on ``T``).

    The max-min problem has the closed form of total variation for every
    tree, so ``T`` only fixes the expected dimension.
    """
    _pair(a, b, T.n_leaves)
    return total_variation(a, b)


def _smooth(p: np.ndarray, eps: float) -> np.ndarray:
    return (p + eps) / (1.0 + p.shape[-1] * eps)


def kl_divergence(p, q, eps: float = JD_EPS) -> float:
    """KL(p || q) on eps-smoothed vectors."""
    p = _smooth(np.asarray(p, dtype=np.float64), eps)
    q = _smooth(np.asarray(q, dtype=np.float64), eps)
    return float((p * (np.log(p) - np.log(q))).sum())


def leaf_jeffrey_divergence(a, b, eps: float = JD_EPS) -> float:
    """Jeffrey divergence KL(a||b) + KL(b||a) directly on the leaf simplex."""
    a, b = _pair(a, b)
    p, q = _smooth(a, eps), _smooth(b, eps)
    return float(((p - q) * (np.log(p) - np.log(q))).sum())


def jeffrey_divergence(T: TreeTopology, a, b, eps: float = JD_EPS) -> float:
    """Jeffrey divergence between the tree embeddings of ``a`` and ``b``.

    Requires every leaf's root path to have unit total weight, which makes
    the embeddings probability vectors; raises :class:`TopologyError`
    otherwise. Under that condition ``twd(T, a, b) ** 2 <= JD``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    a, b = _pair(a, b, T.n_leaves)
    if not T.has_unit_paths():
        worst = np.abs(T.leaf_weight_sums() - 1.0).max()
        raise TopologyError(f"B^T w must equal 1 for the Jeffrey bound (max deviation {worst:.3g})")
    p, q = _smooth(tree_embed(T, a), eps), _smooth(tree_embed(T, b), eps)
    return float(((p - q) * (np.log(p) - np.log(q))).sum())


def cosine_similarity(z, z2) -> float:
    z = np.asarray(z, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    nz, nz2 = np.linalg.norm(z), np.linalg.norm(z2)
    if nz == 0 or nz2 == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(z @ z2 / (nz * nz2), -1.0, 1.0))


@dataclass(frozen=True)
class DistanceKind:
    """Which dissimilarity to use between embeddings.

    ``kind`` is one of ``"twd"`` (needs ``topology``), ``"tv"``, ``"l1"``
    or ``"cosine"``. For cosine the dissimilarity is ``1 - cos``.
    """

    kind: str
    topology: TreeTopology | None = None

    def __post_init__(self):
        if self.kind not in ("twd", "tv", "l1", "cosine"):
            raise ValueError(f"unknown distance kind {self.kind!r}")
        if self.kind == "twd" and self.topology is None:
            raise ValueError("twd distance needs a topology")

    @property
    def is_probabilistic(self) -> bool:
        return self.kind in ("twd", "tv")

    def pairwise(self, X, Y) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if self.kind == "twd":
            return pairwise_twd(self.topology, X, Y)
        if self.kind in ("tv", "l1"):
            out = np.empty((X.shape[0], Y.shape[0]))
            for s in range(0, X.shape[0], 128):
                out[s:s + 128] = np.abs(X[s:s + 128, None, :] - Y[None, :, :]).sum(axis=2)
            return 0.5 * out if self.kind == "tv" else out
        nx = np.linalg.norm(X, axis=1, keepdims=True)
        ny = np.linalg.norm(Y, axis=1, keepdims=True)
        if np.any(nx == 0) or np.any(ny == 0):
            raise ValueError("cosine distance of a zero vector is undefined")
        return 1.0 - (X / nx) @ (Y / ny).T


# -- differentiable versions ------------------------------------------------

def _embed_node(g: Graph, T: TreeTopology, a: Node) -> Node:
    return g.matmul(a, g.const(T.embedding_matrix.T))


def twd_node(g: Graph, T: TreeTopology, a: Node, b: Node) -> Node:
    """Row-wise TWD between two equally shaped batches (vector of length R)."""
    diff = g.sub(a, b)
    return g.sum(g.abs(_embed_node(g, T, diff)), axis=-1)


def pairwise_twd_node(g: Graph, T: TreeTopology, a: Node, b: Node | None = None) -> Node:
    """Matrix of TWDs between the rows of ``a`` and the rows of ``b``."""
    pa = _embed_node(g, T, a)
    pb = pa if b is None else _embed_node(g, T, b)
    return g.cdist_l1(pa, pb)


def jd_node(g: Graph, a: Node, b: Node, T: TreeTopology | None = None,
            eps: float = JD_EPS) -> Node:
    """Row-wise Jeffrey divergence.

    With ``T`` the divergence is taken between tree embeddings (``T`` must
    have unit root paths); without it, on the rows themselves.
    """
    if T is not None:
        if not T.has_unit_paths():
            raise TopologyError("tree-embedded Jeffrey divergence needs B^T w = 1")
        a, b = _embed_node(g, T, a), _embed_node(g, T, b)
    n = a.shape[-1]
    p = g.scale(g.add(a, g.const(eps)), 1.0 / (1.0 + n * eps))
    q = g.scale(g.add(b, g.const(eps)), 1.0 / (1.0 + n * eps))
    return g.sum(g.mul(g.sub(p, q), g.sub(g.log(p), g.log(q))), axis=-1)
