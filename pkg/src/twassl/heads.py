"""Maps from encoder outputs to probability vectors.

Three families: plain softmax, simplicial embedding (block softmax, each
block scaled by ``1/L``), and the ArcFace model ``softmax(K^T f / eta)``
with a unit-norm encoder output ``f`` and unit-norm key columns. The key
matrix is learned, or fixed to a normalized sinusoidal (positional
encoding) basis or to the orthonormal DCT basis. The ``none`` head passes
the raw real-valued output through, for the cosine baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node

__all__ = [
    "HEAD_KINDS",
    "KEY_KINDS",
    "HeadConfig",
    "KeyMatrix",
    "softmax_head",
    "sem_head",
    "arcface_head",
    "pe_key_matrix",
    "dct_key_matrix",
    "learned_key_matrix",
    "normalize_columns",
    "make_key_matrix",
    "head_node",
]

HEAD_KINDS = ("none", "softmax", "sem", "arcface")
KEY_KINDS = ("learned", "pe", "dct")


@dataclass(frozen=True)
class HeadConfig:
    kind: str = "softmax"
    d_out: int = 32
    L: int | None = None
    V: int | None = None
    key: str = "dct"
    eta: float = 0.1

    @property
    def d_prob(self) -> int:
        # square key matrices: the simplex has one bin per encoder output
        return self.d_out

    def validate(self) -> None:
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"head.kind must be one of {HEAD_KINDS}, got {self.kind!r}")
        if self.d_out < 1:
            raise ValueError("head.d_out must be positive")
        if self.kind == "sem":
            if self.L is None or self.V is None or self.L < 1 or self.V < 1:
                raise ValueError("head.L and head.V must be positive for SEM")
            if self.L * self.V != self.d_prob:
                raise ValueError(f"head.L * head.V = {self.L * self.V} must equal d_prob = {self.d_prob}")
        if self.kind == "arcface":
            if self.key not in KEY_KINDS:
                raise ValueError(f"head.key must be one of {KEY_KINDS}, got {self.key!r}")
            if not self.eta > 0:
                raise ValueError("head.eta must be positive")
            if self.key == "pe" and self.d_out % 2:
                raise ValueError("positional-encoding keys need an even d_out")

    @property
    def label(self) -> str:
        if self.kind == "none":
            return "N/A"
        if self.kind == "softmax":
            return "Softmax"
        if self.kind == "sem":
            return f"SEM(L={self.L},V={self.V})"
        return {"learned": "AF", "pe": "AF (PE)", "dct": "AF (DCT)"}[self.key]


@dataclass(frozen=True)
class KeyMatrix:
    """Key matrix with unit-norm columns; ``learned`` keys are re-projected after each update."""

    K: np.ndarray
    learned: bool = False

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64)
        if K.ndim != 2:
            raise ValueError("key matrix must be 2-D")
        norms = np.linalg.norm(K, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError(f"key columns must have unit norm (max deviation {np.abs(norms - 1).max():.3g})")
        object.__setattr__(self, "K", K)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_head(f) -> np.ndarray:
    return _softmax(np.asarray(f, dtype=np.float64))


def sem_head(f, L: int, V: int) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != L * V:
        raise ValueError(f"SEM needs {L}*{V} = {L * V} inputs, got {f.shape[-1]}")
    blocks = f.reshape(f.shape[:-1] + (L, V))
    return (_softmax(blocks) / L).reshape(f.shape)


def arcface_head(f, K: KeyMatrix | np.ndarray, eta: float) -> np.ndarray:
    if eta <= 0:
        raise ValueError("eta must be positive")
    K = K.K if isinstance(K, KeyMatrix) else np.asarray(K, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    norm = np.linalg.norm(f, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("ArcFace head cannot normalize a zero vector")
    return _softmax((f / norm) @ K / eta)


def normalize_columns(K: np.ndarray) -> np.ndarray:
    return K / np.linalg.norm(K, axis=0, keepdims=True)


def pe_key_matrix(d_out: int, d_prob: int | None = None) -> KeyMatrix:
    """Sinusoidal keys; column ``i`` encodes position ``i``, then is L2-normalized."""
    if d_out % 2:
        raise ValueError("positional encoding needs an even d_out")
    d_prob = d_out if d_prob is None else d_prob
    j = np.arange(d_out // 2)
    i = np.arange(d_prob)
    angle = i[None, :] / 10000.0 ** (2.0 * j[:, None] / d_out)
    K = np.empty((d_out, d_prob))
    K[0::2] = np.sin(angle)
    K[1::2] = np.cos(angle)
    return KeyMatrix(normalize_columns(K))


def dct_key_matrix(d: int) -> KeyMatrix:
    """Orthonormal DCT-II basis; column ``i`` is the frequency-``i`` vector.

    ``K.T`` is the usual DCT-II matrix, so ``K.T @ f`` are the DCT
    coefficients of ``f``.
    """
    if d < 1:
        raise ValueError("d must be positive")
    j = np.arange(d)[:, None]
    i = np.arange(d)[None, :]
    K = np.sqrt(2.0 / d) * np.cos(np.pi * (2 * j + 1) * i / (2.0 * d))
    K[:, 0] = 1.0 / np.sqrt(d)
    return KeyMatrix(K)


def learned_key_matrix(d_out: int, d_prob: int | None, rng: np.random.Generator) -> KeyMatrix:
    d_prob = d_out if d_prob is None else d_prob
    return KeyMatrix(normalize_columns(rng.standard_normal((d_out, d_prob))), learned=True)


def make_key_matrix(cfg: HeadConfig, rng: np.random.Generator | None = None) -> KeyMatrix | None:
    if cfg.kind != "arcface":
        return None
    if cfg.key == "dct":
        return dct_key_matrix(cfg.d_out)
    if cfg.key == "pe":
        return pe_key_matrix(cfg.d_out, cfg.d_prob)
    if rng is None:
        raise ValueError("a learned key matrix needs a random generator")
    return learned_key_matrix(cfg.d_out, cfg.d_prob, rng)


def head_node(g: Graph, cfg: HeadConfig, f: Node, key: Node | None = None) -> Node:
    """Record the head on ``g`` for a batch ``f`` of encoder outputs (rows)."""
    if cfg.kind == "none":
        return f
    if cfg.kind == "softmax":
        return g.softmax(f, axis=-1)
    if cfg.kind == "sem":
        rows = f.shape[0]
        blocks = g.softmax(g.reshape(f, (rows, cfg.L, cfg.V)), axis=-1)
        return g.scale(g.reshape(blocks, (rows, cfg.L * cfg.V)), 1.0 / cfg.L)
    if key is None:
        raise ValueError("ArcFace head needs a key matrix node")
    logits = g.matmul(g.l2_normalize(f, axis=-1), key)
    return g.softmax(g.scale(logits, 1.0 / cfg.eta), axis=-1)
