"""Synthetic two-view data and k-nearest-neighbour evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distances import DistanceKind

__all__ = [
    "AugmentSpec",
    "SyntheticSpec",
    "LabeledSet",
    "make_synthetic",
    "two_views",
    "load_csv",
    "knn_predict",
    "knn_classify",
]


@dataclass(frozen=True)
class AugmentSpec:
    sigma: float = 0.5
    dropout: float = 0.2

    def validate(self) -> None:
        if self.sigma < 0:
            raise ValueError("augmentation sigma must be nonnegative")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("augmentation dropout must lie in [0, 1]")


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian class clusters.

    Class centers are isotropic Gaussian draws with expected norm
    ``center_scale``; samples add isotropic noise with per-coordinate
    standard deviation ``noise_scale``.
    """

    n_classes: int = 4
    d_in: int = 32
    train_per_class: int = 500
    test_per_class: int = 200
    center_scale: float = 3.0
    noise_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_classes", "d_in", "train_per_class", "test_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"data.{name} must be positive")
        if self.center_scale < 0 or self.noise_scale < 0:
            raise ValueError("data scales must be nonnegative")


@dataclass
class LabeledSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} rows but {self.y.shape[0]} labels")

    def __len__(self) -> int:
        return self.y.shape[0]


def make_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None):
    """Draw disjoint train and test sets from the same class clusters."""
    spec.validate()
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    centers = rng.standard_normal((spec.n_classes, spec.d_in)) * (spec.center_scale / np.sqrt(spec.d_in))

    def draw(per_class: int) -> LabeledSet:
        y = np.repeat(np.arange(spec.n_classes), per_class)
        X = centers[y] + spec.noise_scale * rng.standard_normal((y.size, spec.d_in))
        return LabeledSet(X, y)

    return draw(spec.train_per_class), draw(spec.test_per_class)


def two_views(x, aug: AugmentSpec, rng: np.random.Generator):
    """Two independent augmentations of ``x`` (additive noise, then feature dropout)."""
    x = np.asarray(x, dtype=np.float64)
    views = []
    for _ in range(2):
        u = x + aug.sigma * rng.standard_normal(x.shape) if aug.sigma > 0 else x.copy()
        if aug.dropout > 0:
            u = u * (rng.random(x.shape) >= aug.dropout)
        views.append(u)
    return views[0], views[1]


def load_csv(path: str | Path) -> LabeledSet:
    """Read ``label, feature_1, ..., feature_d`` rows (no header)."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    labels = data[:, 0]
    if not np.all(labels == np.round(labels)):
        raise ValueError(f"{path}: first column must hold integer labels")
    return LabeledSet(data[:, 1:], labels.astype(np.int64))


def knn_predict(train_emb, train_y, test_emb, K: int, metric: DistanceKind,
                chunk: int = 256) -> np.ndarray:
    """Majority vote over the ``K`` nearest training rows.

    Neighbours are ranked by (distance, label), which makes the result
    independent of training-set order. Vote ties go to the class with the
    smaller summed neighbour distance, then to the lower class index.
    """
    train_emb = np.asarray(train_emb, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    test_emb = np.asarray(test_emb, dtype=np.float64)
    if train_emb.shape[0] == 0:
        raise ValueError("empty training set")
    if not 1 <= K <= train_emb.shape[0]:
        raise ValueError(f"K={K} must lie in [1, {train_emb.shape[0]}]")
    classes = np.unique(train_y)
    preds = np.empty(test_emb.shape[0], dtype=np.int64)
    for s in range(0, test_emb.shape[0], chunk):
        D = metric.pairwise(test_emb[s:s + chunk], train_emb)
        labels = np.broadcast_to(train_y, D.shape)
        order = np.lexsort((labels, D), axis=1)[:, :K]
        top_y = np.take_along_axis(labels, order, axis=1)
        top_d = np.take_along_axis(D, order, axis=1)
        hit = top_y[:, :, None] == classes[None, None, :]
        votes = hit.sum(axis=1)
        dist = np.where(hit, top_d[:, :, None], 0.0).sum(axis=1)
        cls_idx = np.broadcast_to(np.arange(classes.size), votes.shape)
        best = np.lexsort((cls_idx, dist, -votes), axis=1)[:, 0]
        preds[s:s + chunk] = classes[best]
    return preds


def knn_classify(train_emb, train_y, test_emb, test_y, K: int, metric: DistanceKind) -> float:
    """Accuracy of :func:`knn_predict` on labelled test rows."""
    preds = knn_predict(train_emb, train_y, test_emb, K, metric)
    return float(np.mean(preds == np.asarray(test_y)))
