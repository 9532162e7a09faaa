"""Tree topologies for the tree-Wasserstein distance.

A tree is stored by its leaf-ancestor incidence matrix ``B`` (one row per
non-root node, one column per leaf) and the weight ``w`` of the edge above
each node. The root is implicit and carries no edge. Node rows are ordered
with internal nodes first (breadth first) and leaves last, in leaf order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

__all__ = [
    "TreeTopology",
    "TopologyError",
    "ValidationReport",
    "build_tv_tree",
    "build_cluster_tree",
    "build_chain_tree",
    "shortest_path_matrix",
    "tree_embed",
    "validate_topology",
    "four_point_gap",
]


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    message: str = ""
    node: int | None = None
    leaf: int | None = None

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class TreeTopology:
    """Immutable tree given by ``B`` (n_nodes x n_leaves) and edge weights ``w``."""

    B: np.ndarray
    w: np.ndarray
    leaf_ids: tuple[int, ...]
    kind: str = "custom"

    def __post_init__(self):
        B = np.array(self.B, dtype=np.float64)
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        B.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "leaf_ids", tuple(int(i) for i in self.leaf_ids))

    @property
    def n_nodes(self) -> int:
        return self.B.shape[0]

    @property
    def n_leaves(self) -> int:
        return self.B.shape[1]

    @property
    def embedding_matrix(self) -> np.ndarray:
        """``diag(w) @ B``; maps a leaf distribution to node masses."""
        return self.w[:, None] * self.B

    def leaf_weight_sums(self) -> np.ndarray:
        """``B.T @ w``: total edge weight on each leaf's root path."""
        return self.B.T @ self.w

    def has_unit_paths(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(self.leaf_weight_sums() - 1.0) <= tol))

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        rows = ["".join("1" if v else "0" for v in row) for row in self.B.astype(int)]
        return {
            "n_nodes": self.n_nodes,
            "n_leaves": self.n_leaves,
            "B": rows,
            "w": [float(x) for x in self.w],
            "leaf_ids": list(self.leaf_ids),
            "kind": self.kind,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> TreeTopology:
        rows = doc["B"]
        B = np.array([[int(ch) for ch in row] for row in rows], dtype=np.float64)
        if B.shape != (doc["n_nodes"], doc["n_leaves"]):
            raise TopologyError(
                f"B has shape {B.shape}, header says ({doc['n_nodes']}, {doc['n_leaves']})")
        leaf_ids = doc.get("leaf_ids")
        if leaf_ids is None:
            leaf_ids = _infer_leaf_ids(B)
        topo = cls(B, np.asarray(doc["w"], dtype=np.float64), tuple(leaf_ids), doc.get("kind", "custom"))
        report = validate_topology(topo)
        if not report:
            raise TopologyError(report.message)
        return topo

    @classmethod
    def from_json(cls, text: str) -> TreeTopology:
        return cls.from_dict(json.loads(text))


def _infer_leaf_ids(B: np.ndarray) -> list[int]:
    ids = []
    for j in range(B.shape[1]):
        own = [i for i in np.flatnonzero(B[:, j]) if B[i].sum() == 1]
        if len(own) != 1:
            raise TopologyError(f"cannot identify the node of leaf {j}")
        ids.append(int(own[0]))
    return ids


def build_tv_tree(n_leaves: int, edge_weight: float = 0.5) -> TreeTopology:
    """Depth-one star: every leaf hangs from the root. ``w = 1/2`` gives total variation."""
    if n_leaves < 1:
        raise TopologyError("n_leaves must be >= 1")
    if edge_weight < 0:
        raise TopologyError("edge_weight must be nonnegative")
    return TreeTopology(np.eye(n_leaves), np.full(n_leaves, float(edge_weight)),
                        tuple(range(n_leaves)), "tv")


def build_cluster_tree(n_clusters: int, leaves_per_cluster: int,
                       internal_weight: float = 0.5, leaf_weight: float = 0.5) -> TreeTopology:
    """Two-level tree: root -> cluster nodes -> leaves.

    Leaves ``c * leaves_per_cluster ... (c + 1) * leaves_per_cluster - 1``
    belong to cluster ``c``.
    """
    if n_clusters < 1 or leaves_per_cluster < 1:
        raise TopologyError("cluster counts must be >= 1")
    if internal_weight < 0 or leaf_weight < 0:
        raise TopologyError("edge weights must be nonnegative")
    n_leaves = n_clusters * leaves_per_cluster
    B = np.zeros((n_clusters + n_leaves, n_leaves))
    for j in range(n_leaves):
        B[j // leaves_per_cluster, j] = 1.0
        B[n_clusters + j, j] = 1.0
    w = np.concatenate([np.full(n_clusters, float(internal_weight)),
                        np.full(n_leaves, float(leaf_weight))])
    leaf_ids = tuple(range(n_clusters, n_clusters + n_leaves))
    return TreeTopology(B, w, leaf_ids, "cluster")


def build_chain_tree(n_leaves: int, weights: float | Sequence[float] = 1.0) -> TreeTopology:
    """Tree form of a 1-D chain of leaves.

    The chain vertices become internal nodes ``v_1 .. v_n`` (``v_1`` is the
    root) and leaf ``j`` hangs off ``v_j`` by a zero-weight edge. ``weights``
    gives the ``n_leaves - 1`` chain edges ``v_{j} - v_{j+1}``; a scalar is
    broadcast.
    """
    if n_leaves < 1:
        raise TopologyError("n_leaves must be >= 1")
    n_edges = n_leaves - 1
    chain_w = np.full(n_edges, float(weights)) if np.isscalar(weights) \
        else np.asarray(weights, dtype=np.float64).reshape(-1)
    if chain_w.size != n_edges:
        raise TopologyError(f"chain with {n_leaves} leaves needs {n_edges} weights, got {chain_w.size}")
    if np.any(chain_w < 0):
        raise TopologyError("edge weights must be nonnegative")
    B = np.zeros((n_edges + n_leaves, n_leaves))
    for j in range(n_leaves):
        # v_2 .. v_{j+1} lie on leaf j's root path
        B[:j, j] = 1.0
        B[n_edges + j, j] = 1.0
    w = np.concatenate([chain_w, np.zeros(n_leaves)])
    return TreeTopology(B, w, tuple(range(n_edges, n_edges + n_leaves)), "chain")


def validate_topology(T: TreeTopology) -> ValidationReport:
    """Check the structural invariants of ``T``; report the first violation."""
    B, w = T.B, T.w
    if B.ndim != 2 or B.shape[1] < 1:
        return ValidationReport(False, f"B must be a non-empty matrix, got shape {B.shape}")
    if w.shape != (B.shape[0],):
        return ValidationReport(False, f"w has length {w.size}, expected {B.shape[0]}")
    if not np.all((B == 0) | (B == 1)):
        i, j = np.argwhere((B != 0) & (B != 1))[0]
        return ValidationReport(False, f"B[{i}, {j}] is not binary", int(i), int(j))
    if not np.all(np.isfinite(w)):
        i = int(np.flatnonzero(~np.isfinite(w))[0])
        return ValidationReport(False, f"weight of node {i} is not finite", node=i)
    if np.any(w < 0):
        i = int(np.flatnonzero(w < 0)[0])
        return ValidationReport(False, f"weight of node {i} is negative ({w[i]})", node=i)
    empty = np.flatnonzero(B.sum(axis=1) == 0)
    if empty.size:
        return ValidationReport(False, f"node {empty[0]} has no leaf below it", node=int(empty[0]))
    if len(T.leaf_ids) != B.shape[1]:
        return ValidationReport(False, f"{len(T.leaf_ids)} leaf ids for {B.shape[1]} leaves")
    for j, node in enumerate(T.leaf_ids):
        if not 0 <= node < B.shape[0]:
            return ValidationReport(False, f"leaf {j} refers to missing node {node}", node, j)
        if B[node, j] != 1:
            return ValidationReport(False, f"column of leaf {j} misses its own row {node}", node, j)
        if B[node].sum() != 1:
            return ValidationReport(False, f"leaf node {node} has descendants other than leaf {j}", node, j)
    # each column's nodes must be nested by descendant sets (a root path)
    support = B.astype(bool)
    for j in range(B.shape[1]):
        nodes = np.flatnonzero(support[:, j])
        order = nodes[np.argsort(-support[nodes].sum(axis=1), kind="stable")]
        for upper, lower in zip(order[:-1], order[1:]):
            # equal sets are allowed: a node may have a single child (chain trees)
            if not np.all(support[upper] >= support[lower]):
                return ValidationReport(
                    False, f"ancestors of leaf {j} do not form a root path at node {lower}", int(lower), j)
    return ValidationReport(True)


def shortest_path_matrix(T: TreeTopology) -> np.ndarray:
    """Leaf-to-leaf path lengths, ``w @ (b_i + b_j - 2 b_i * b_j)``."""
    B, w = T.B, T.w
    depth = B.T @ w
    shared = B.T @ (w[:, None] * B)
    D = depth[:, None] + depth[None, :] - 2.0 * shared
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def tree_embed(T: TreeTopology, a) -> np.ndarray:
    """Node masses ``diag(w) B a``. Accepts one distribution or a batch of rows."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != T.n_leaves:
        raise ValueError(f"expected {T.n_leaves} leaf masses, got {a.shape[-1]}")
    return a @ T.embedding_matrix.T


def four_point_gap(D: np.ndarray) -> float:
    """Largest violation of the four-point condition over all leaf quadruples.

    For a tree metric the two largest of ``d(x,y)+d(z,t)``, ``d(x,z)+d(y,t)``,
    ``d(x,t)+d(y,z)`` coincide, so the returned gap is zero.
    """
    worst = 0.0
    for x, y, z, t in combinations(range(D.shape[0]), 4):
        sums = sorted((D[x, y] + D[z, t], D[x, z] + D[y, t], D[x, t] + D[y, z]))
        worst = max(worst, sums[2] - sums[1])
    return worst
