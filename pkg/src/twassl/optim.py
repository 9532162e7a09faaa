"""SGD with momentum and Adam over dictionaries of numpy parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .heads import normalize_columns

__all__ = ["NonFiniteGradientError", "OptimizerState", "optimizer_step", "make_optimizer"]


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}; step skipped")
        self.name = name


@dataclass
class OptimizerState:
    """``kind`` is ``"sgd"`` or ``"adam"``.

    Weight decay is added to the gradient (L2 penalty). Parameters listed
    in ``unit_columns`` are projected back to unit-norm columns after every
    update.
    """

    kind: str
    lr: float
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    unit_columns: frozenset[str] = frozenset()
    step_count: int = 0
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def optimizer_step(state: OptimizerState, params: dict[str, np.ndarray],
                   grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Return updated parameters; ``state`` buffers and step count advance in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.step_count += 1
    t = state.step_count
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        if state.kind == "sgd":
            if state.momentum:
                buf = state.buffers.get(name)
                buf = g.copy() if buf is None else state.momentum * buf + g
                state.buffers[name] = buf
                g = buf
            new = p - state.lr * g
        else:
            m = state.buffers.get(name, np.zeros_like(p))
            v = state.second.get(name, np.zeros_like(p))
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.buffers[name], state.second[name] = m, v
            m_hat = m / (1.0 - state.beta1 ** t)
            v_hat = v / (1.0 - state.beta2 ** t)
            new = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if name in state.unit_columns:
            new = normalize_columns(new)
        out[name] = new
    return out


def make_optimizer(cfg, unit_columns=()) -> OptimizerState:
    """Build state from a resolved :class:`~twassl.config.OptimizerConfig`."""
    return OptimizerState(cfg.kind, cfg.lr, momentum=cfg.momentum if cfg.kind == "sgd" else 0.0,
                          beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                          weight_decay=cfg.weight_decay, unit_columns=frozenset(unit_columns))
