"""Self-supervised objectives with the tree-Wasserstein distance.

All loss builders take autodiff nodes holding batches (one row per sample)
and return a scalar node. Rows ``i`` of the two views come from the same
source sample.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Graph, Node
from .distances import jd_node, pairwise_twd, pairwise_twd_node, twd_node
from .trees import TopologyError, TreeTopology, build_tv_tree

__all__ = [
    "OBJECTIVES",
    "LossConfig",
    "CollapseMetrics",
    "negative_mask",
    "infonce_twd_loss",
    "infonce_cosine_loss",
    "simsiam_twd_loss",
    "simsiam_cosine_loss",
    "jd_regularizer",
    "resolve_jd_mode",
    "collapse_metrics",
]

OBJECTIVES = ("infonce_twd", "simsiam_twd", "infonce_cosine", "simsiam_cosine")


@dataclass(frozen=True)
class LossConfig:
    objective: str = "infonce_twd"
    tau: float = 0.07
    lambda_jd: float = 0.1
    jd_mode: str = "auto"

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"loss.objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.tau > 0:
            raise ValueError("loss.tau must be positive")
        if self.lambda_jd < 0:
            raise ValueError("loss.lambda_jd must be nonnegative")
        if self.jd_mode not in ("auto", "tree", "leaf"):
            raise ValueError(f"loss.jd_mode must be auto, tree or leaf, got {self.jd_mode!r}")

    @property
    def uses_twd(self) -> bool:
        return self.objective.endswith("_twd")

    @property
    def contrastive(self) -> bool:
        return self.objective.startswith("infonce")


def negative_mask(R: int) -> np.ndarray:
    """``(2R, 2R)`` mask of negatives for the stacked batch ``[view1; view2]``.

    Row ``k`` excludes itself and the other view of the same sample.
    """
    idx = np.arange(2 * R)
    partner = (idx + R) % (2 * R)
    mask = np.ones((2 * R, 2 * R), dtype=bool)
    mask[idx, idx] = False
    mask[idx, partner] = False
    return mask


def resolve_jd_mode(T: TreeTopology, mode: str) -> TreeTopology | None:
    """Tree to embed with for the Jeffrey term, or ``None`` for the leaf simplex."""
    if mode == "leaf":
        return None
    if mode == "tree":
        if not T.has_unit_paths():
            raise TopologyError("jd_mode='tree' needs a topology with B^T w = 1")
        return T
    return T if T.has_unit_paths() else None


def jd_regularizer(g: Graph, a1: Node, a2: Node, T: TreeTopology, mode: str = "auto") -> Node:
    """Mean Jeffrey divergence over the positive pairs ``(a1[i], a2[i])``."""
    return g.mean(jd_node(g, a1, a2, resolve_jd_mode(T, mode)))


def _contrastive(g: Graph, sim: Node, R: int, tau: float) -> Node:
    """Mean over all 2R anchors of ``-sim_pos / tau + logsumexp_neg(sim / tau)``."""
    idx = np.arange(2 * R)
    partner = (idx + R) % (2 * R)
    pos = g.getitem(sim, (idx, partner))
    lse = g.logsumexp(g.scale(sim, 1.0 / tau), axis=1, mask=negative_mask(R))
    return g.mean(g.add(g.scale(pos, -1.0 / tau), lse))


def infonce_twd_loss(g: Graph, a1: Node, a2: Node, T: TreeTopology, tau: float = 0.07,
                     lambda_jd: float = 0.0, jd_mode: str = "auto") -> Node:
    """InfoNCE with similarity ``-TWD`` plus ``lambda_jd`` times the Jeffrey term.

    Both views act as anchors. For anchor ``k`` the positive is the other view
    of the same sample and the negatives are the remaining ``2R - 2`` rows.
    """
    R = a1.shape[0]
    if R < 2:
        raise ValueError("InfoNCE needs at least two samples per batch")
    if a2.shape != a1.shape:
        raise ValueError(f"view shapes differ: {a1.shape} vs {a2.shape}")
    D = pairwise_twd_node(g, T, g.concat([a1, a2], axis=0))
    loss = _contrastive(g, g.scale(D, -1.0), R, tau)
    if lambda_jd > 0:
        loss = g.add(loss, g.scale(jd_regularizer(g, a1, a2, T, jd_mode), lambda_jd))
    return loss


def infonce_cosine_loss(g: Graph, z1: Node, z2: Node, tau: float = 0.07) -> Node:
    R = z1.shape[0]
    if R < 2:
        raise ValueError("InfoNCE needs at least two samples per batch")
    z = g.l2_normalize(g.concat([z1, z2], axis=0), axis=-1)
    return _contrastive(g, g.matmul(z, g.transpose(z)), R, tau)


def _require_stopped(*nodes: Node) -> None:
    for node in nodes:
        if node.op != "stop_grad":
            raise ValueError(f"target branch {node} must be wrapped in stop_grad")


def simsiam_twd_loss(g: Graph, online1: Node, online2: Node, target1: Node, target2: Node,
                     T: TreeTopology, lambda_jd: float = 0.0, jd_mode: str = "auto") -> Node:
    """Symmetrized SimSiam loss with TWD in place of negative cosine.

    ``online*`` come through the predictor; ``target*`` must be stop-gradient
    nodes. The loss is ``1/2 mean TWD(online1, target2) + 1/2 mean
    TWD(target1, online2)`` plus ``lambda_jd`` times the same average of
    Jeffrey divergences.
    """
    _require_stopped(target1, target2)
    loss = g.scale(g.add(g.mean(twd_node(g, T, online1, target2)),
                         g.mean(twd_node(g, T, target1, online2))), 0.5)
    if lambda_jd > 0:
        jd_T = resolve_jd_mode(T, jd_mode)
        jd = g.scale(g.add(g.mean(jd_node(g, online1, target2, jd_T)),
                           g.mean(jd_node(g, target1, online2, jd_T))), 0.5)
        loss = g.add(loss, g.scale(jd, lambda_jd))
    return loss


def simsiam_cosine_loss(g: Graph, online1: Node, online2: Node, target1: Node, target2: Node) -> Node:
    _require_stopped(target1, target2)

    def neg_cos(p: Node, z: Node) -> Node:
        cos = g.sum(g.mul(g.l2_normalize(p), g.l2_normalize(z)), axis=-1)
        return g.scale(g.mean(cos), -1.0)

    return g.scale(g.add(neg_cos(online1, target2), neg_cos(target1, online2)), 0.5)


@dataclass
class CollapseMetrics:
    mean_pairwise_twd: float
    dim_std: float
    entropy: float

    def as_dict(self) -> dict:
        return asdict(self)


def collapse_metrics(embeddings, T: TreeTopology | None = None) -> CollapseMetrics:
    """Mode-collapse diagnostics for a batch of probability vectors.

    ``mean_pairwise_twd`` averages over distinct row pairs (TV tree with
    weight 1/2 unless ``T`` is given); ``dim_std`` is the mean per-dimension
    standard deviation; ``entropy`` is the mean Shannon entropy of the rows.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("collapse metrics need at least two rows")
    T = build_tv_tree(X.shape[1], 0.5) if T is None else T
    D = pairwise_twd(T, X)
    iu = np.triu_indices(X.shape[0], k=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(X > 0, X * np.log(X), 0.0)
    return CollapseMetrics(
        mean_pairwise_twd=float(D[iu].mean()),
        dim_std=float(X.std(axis=0).mean()),
        entropy=float(-plogp.sum(axis=1).mean()),
    )
