"""Define-by-run reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` is an append-only tape. Every operation records its kind,
its parent node ids and the forward value it produced; ``backward`` walks
the tape once in reverse. Values are recomputed from the bound leaves by
``forward``, which is what :func:`grad_check` uses to take central
differences.

Example
-------
>>> g = Graph()
>>> x = g.leaf(np.array([1.0, 2.0]))
>>> y = g.sum(0.5 * x * x)
>>> g.backward(y)[x]
array([1., 2.])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Graph",
    "Node",
    "NonFiniteError",
    "UnboundInputError",
    "grad_check",
]


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, node_id: int, op: str):
        super().__init__(f"non-finite value produced by node {node_id} ({op})")
        self.node_id = node_id
        self.op = op


class UnboundInputError(ValueError):
    """Raised when a leaf without a value is needed by a forward pass."""

    def __init__(self, node_id: int, name: str | None):
        label = f" '{name}'" if name else ""
        super().__init__(f"leaf {node_id}{label} has no bound value")
        self.node_id = node_id


@dataclass
class _Record:
    op: str
    parents: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    value: np.ndarray | None = None
    needs_grad: bool = False
    name: str | None = None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _as_matrix_pair(a: np.ndarray, b: np.ndarray):
    a2 = a.reshape(1, -1) if a.ndim == 1 else a
    b2 = b.reshape(-1, 1) if b.ndim == 1 else b
    return a2, b2


# --- forward rules: (parent values, attrs) -> value -------------------------

def _fwd_matmul(v, at):
    return v[0] @ v[1]


def _fwd_logsumexp(v, at):
    x, axis, mask = v[0], at["axis"], at["mask"]
    masked = np.where(mask, x, -np.inf) if mask is not None else x
    m = masked.max(axis=axis, keepdims=True)
    s = np.exp(masked - m).sum(axis=axis, keepdims=True)
    return np.squeeze(m + np.log(s), axis=axis)


def _safe_norm(x, axis):
    # zero vectors map to zero with zero adjoint (same convention as |x| at 0)
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    return np.where(norm > 0, norm, np.inf)


def _fwd_l2_normalize(v, at):
    return v[0] / _safe_norm(v[0], at["axis"])


def _cdist_l1(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # one (rows x rows) slab per feature: faster than a 3-D broadcast for small d
    out = np.zeros((p.shape[0], q.shape[0]))
    tmp = np.empty_like(out)
    for k in range(p.shape[1]):
        np.subtract(p[:, k, None], q[None, :, k], out=tmp)
        out += np.abs(tmp, out=tmp)
    return out


_FORWARD: dict[str, Callable] = {
    "add": lambda v, at: v[0] + v[1],
    "sub": lambda v, at: v[0] - v[1],
    "mul": lambda v, at: v[0] * v[1],
    "scale": lambda v, at: v[0] * at["c"],
    "matmul": _fwd_matmul,
    "transpose": lambda v, at: v[0].T,
    "relu": lambda v, at: np.maximum(v[0], 0.0),
    "exp": lambda v, at: np.exp(v[0]),
    "log": lambda v, at: np.log(v[0]),
    "abs": lambda v, at: np.abs(v[0]),
    "softmax": lambda v, at: _softmax(v[0], at["axis"]),
    "logsumexp": _fwd_logsumexp,
    "l2_normalize": _fwd_l2_normalize,
    "sum": lambda v, at: np.asarray(v[0].sum(axis=at["axis"], keepdims=at["keepdims"])),
    "mean": lambda v, at: np.asarray(v[0].mean(axis=at["axis"], keepdims=at["keepdims"])),
    "concat": lambda v, at: np.concatenate(v, axis=at["axis"]),
    "reshape": lambda v, at: v[0].reshape(at["shape"]),
    "getitem": lambda v, at: np.array(v[0][at["index"]]),
    "cdist_l1": lambda v, at: _cdist_l1(v[0], v[1]),
    "stop_grad": lambda v, at: v[0].copy(),
}


# --- backward rules: (adjoint, parent values, output, attrs) -> parent adjoints

def _bwd_matmul(g, v, out, at):
    a, b = v
    a2, b2 = _as_matrix_pair(a, b)
    g2 = g.reshape(a2.shape[0], b2.shape[1])
    return (g2 @ b2.T).reshape(a.shape), (a2.T @ g2).reshape(b.shape)


def _bwd_softmax(g, v, out, at):
    axis = at["axis"]
    return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)


def _bwd_logsumexp(g, v, out, at):
    x, axis, mask = v[0], at["axis"], at["mask"]
    masked = np.where(mask, x, -np.inf) if mask is not None else x
    weights = np.exp(masked - np.expand_dims(out, axis))
    return (np.expand_dims(g, axis) * weights,)


def _bwd_l2_normalize(g, v, out, at):
    axis = at["axis"]
    return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / _safe_norm(v[0], axis),)


def _bwd_sum(g, v, out, at):
    axis, keepdims = at["axis"], at["keepdims"]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, v[0].shape).copy(),)


def _bwd_mean(g, v, out, at):
    (grad,) = _bwd_sum(g, v, out, at)
    count = v[0].size if at["axis"] is None else np.prod(
        [v[0].shape[ax] for ax in np.atleast_1d(at["axis"])])
    return (grad / count,)


def _bwd_concat(g, v, out, at):
    splits = np.cumsum([p.shape[at["axis"]] for p in v])[:-1]
    return tuple(np.split(g, splits, axis=at["axis"]))


def _bwd_getitem(g, v, out, at):
    grad = np.zeros_like(v[0])
    np.add.at(grad, at["index"], g)
    return (grad,)


def _bwd_cdist_l1(g, v, out, at):
    p, q = v
    gp = np.empty_like(p)
    gq = np.empty_like(q)
    weighted = np.empty(g.shape)
    for k in range(p.shape[1]):
        np.subtract(p[:, k, None], q[None, :, k], out=weighted)
        np.sign(weighted, out=weighted)
        weighted *= g
        gp[:, k] = weighted.sum(axis=1)
        gq[:, k] = -weighted.sum(axis=0)
    return gp, gq


_BACKWARD: dict[str, Callable] = {
    "add": lambda g, v, o, at: (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)),
    "sub": lambda g, v, o, at: (_unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)),
    "mul": lambda g, v, o, at: (_unbroadcast(g * v[1], v[0].shape),
                                _unbroadcast(g * v[0], v[1].shape)),
    "scale": lambda g, v, o, at: (g * at["c"],),
    "matmul": _bwd_matmul,
    "transpose": lambda g, v, o, at: (g.T,),
    "relu": lambda g, v, o, at: (g * (v[0] > 0),),
    "exp": lambda g, v, o, at: (g * o,),
    "log": lambda g, v, o, at: (g / v[0],),
    # d|x|/dx := 0 at x == 0
    "abs": lambda g, v, o, at: (g * np.sign(v[0]),),
    "softmax": _bwd_softmax,
    "logsumexp": _bwd_logsumexp,
    "l2_normalize": _bwd_l2_normalize,
    "sum": _bwd_sum,
    "mean": _bwd_mean,
    "concat": _bwd_concat,
    "reshape": lambda g, v, o, at: (g.reshape(v[0].shape),),
    "getitem": _bwd_getitem,
    "cdist_l1": _bwd_cdist_l1,
}


class Node:
    """Handle to one entry of a :class:`Graph` tape.

    Supports ``+ - * @``, unary minus, division by a scalar and basic
    indexing; each builds a new node on the same graph.
    """

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.graph.value(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def op(self) -> str:
        return self.graph._records[self.id].op

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.op!r})"

    def _lift(self, other) -> Node:
        return other if isinstance(other, Node) else self.graph.const(other)

    def __add__(self, other):
        return self.graph.add(self, self._lift(other))

    def __radd__(self, other):
        return self.graph.add(self._lift(other), self)

    def __sub__(self, other):
        return self.graph.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.graph.sub(self._lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.graph.scale(self, float(other))
        return self.graph.mul(self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return self.graph.scale(self, 1.0 / float(other))

    def __neg__(self):
        return self.graph.scale(self, -1.0)

    def __matmul__(self, other):
        return self.graph.matmul(self, self._lift(other))

    def __rmatmul__(self, other):
        return self.graph.matmul(self._lift(other), self)

    def __getitem__(self, index):
        return self.graph.getitem(self, index)


class Graph:
    """Append-only computation tape.

    Operations evaluate eagerly whenever their inputs are bound, so values
    are available while the graph is being built. A graph must stay on the
    thread that created it.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._handles: list[Node] = []
        self._adjoints: list[np.ndarray | None] = []

    def __len__(self) -> int:
        return len(self._records)

    # -- leaves -------------------------------------------------------------

    def leaf(self, value=None, name: str | None = None, requires_grad: bool = True) -> Node:
        """Add an input node. ``value`` may be bound later with :meth:`bind`."""
        rec = _Record("leaf", (), needs_grad=requires_grad, name=name)
        if value is not None:
            rec.value = self._check_leaf_value(value, len(self._records))
        return self._append(rec)

    def const(self, value, name: str | None = None) -> Node:
        """Add a leaf that never receives a gradient."""
        return self.leaf(value, name=name, requires_grad=False)

    def bind(self, node: Node, value) -> None:
        rec = self._records[node.id]
        if rec.op != "leaf":
            raise ValueError(f"node {node.id} is not a leaf")
        rec.value = self._check_leaf_value(value, node.id)

    @staticmethod
    def _check_leaf_value(value, node_id: int) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(node_id, "leaf")
        return arr

    # -- evaluation ----------------------------------------------------------

    def value(self, node: Node) -> np.ndarray:
        rec = self._records[node.id]
        if rec.value is None:
            self.forward(node)
        return rec.value

    def forward(self, root: Node) -> np.ndarray:
        """Recompute every node up to ``root`` from the bound leaves."""
        for i in range(root.id + 1):
            rec = self._records[i]
            if rec.op == "leaf":
                if rec.value is None:
                    raise UnboundInputError(i, rec.name)
                continue
            rec.value = self._evaluate(i, rec)
        return self._records[root.id].value

    def _evaluate(self, node_id: int, rec: _Record) -> np.ndarray:
        parents = [self._records[p].value for p in rec.parents]
        with np.errstate(all="ignore"):
            out = np.asarray(_FORWARD[rec.op](parents, rec.attrs), dtype=np.float64)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(node_id, rec.op)
        return out

    def backward(self, root: Node) -> dict[Node, np.ndarray]:
        """Propagate adjoints from a scalar ``root``.

        Returns a mapping from every leaf to its adjoint. Leaves that do not
        influence ``root`` (or sit behind a stop-gradient) map to zeros.
        """
        out = self.value(root)
        if out.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {out.shape}")
        adj: list[np.ndarray | None] = [None] * len(self._records)
        adj[root.id] = np.ones_like(out)
        for i in range(root.id, -1, -1):
            rec = self._records[i]
            g = adj[i]
            if g is None or rec.op in ("leaf", "stop_grad"):
                continue
            parent_vals = [self._records[p].value for p in rec.parents]
            grads = _BACKWARD[rec.op](g, parent_vals, rec.value, rec.attrs)
            for p, gp in zip(rec.parents, grads):
                if not self._records[p].needs_grad:
                    continue
                adj[p] = gp if adj[p] is None else adj[p] + gp
        self._adjoints = adj
        return {
            self._handles[i]: (adj[i] if adj[i] is not None else np.zeros_like(self.value(self._handles[i])))
            for i, rec in enumerate(self._records)
            if rec.op == "leaf"
        }

    def grad(self, node: Node) -> np.ndarray:
        """Adjoint of ``node`` from the most recent backward pass."""
        if node.id < len(self._adjoints) and self._adjoints[node.id] is not None:
            return self._adjoints[node.id]
        return np.zeros_like(self.value(node))

    # -- op plumbing ---------------------------------------------------------

    def _append(self, rec: _Record) -> Node:
        node = Node(self, len(self._records))
        self._records.append(rec)
        self._handles.append(node)
        return node

    def _op(self, op: str, parents: Sequence[Node], **attrs) -> Node:
        for p in parents:
            if p.graph is not self:
                raise ValueError("cannot mix nodes from different graphs")
        recs = [self._records[p.id] for p in parents]
        rec = _Record(
            op,
            tuple(p.id for p in parents),
            attrs,
            needs_grad=op != "stop_grad" and any(r.needs_grad for r in recs),
        )
        node_id = len(self._records)
        if all(r.value is not None for r in recs):
            rec.value = self._evaluate(node_id, rec)
        return self._append(rec)

    # -- operations ----------------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        return self._op("add", [a, b])

    def sub(self, a: Node, b: Node) -> Node:
        return self._op("sub", [a, b])

    def mul(self, a: Node, b: Node) -> Node:
        """Elementwise product with numpy broadcasting."""
        return self._op("mul", [a, b])

    def scale(self, a: Node, c: float) -> Node:
        return self._op("scale", [a], c=float(c))

    def matmul(self, a: Node, b: Node) -> Node:
        return self._op("matmul", [a, b])

    def transpose(self, a: Node) -> Node:
        return self._op("transpose", [a])

    def relu(self, a: Node) -> Node:
        return self._op("relu", [a])

    def exp(self, a: Node) -> Node:
        return self._op("exp", [a])

    def log(self, a: Node) -> Node:
        return self._op("log", [a])

    def abs(self, a: Node) -> Node:
        return self._op("abs", [a])

    def softmax(self, a: Node, axis: int = -1) -> Node:
        return self._op("softmax", [a], axis=axis)

    def logsumexp(self, a: Node, axis: int = -1, mask: np.ndarray | None = None) -> Node:
        """Stable log-sum-exp along ``axis``; entries where ``mask`` is False are skipped."""
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
            if not mask.any(axis=axis).all():
                raise ValueError("mask leaves an empty reduction")
        return self._op("logsumexp", [a], axis=axis, mask=mask)

    def l2_normalize(self, a: Node, axis: int = -1) -> Node:
        return self._op("l2_normalize", [a], axis=axis)

    def sum(self, a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
        return self._op("sum", [a], axis=axis, keepdims=keepdims)

    def mean(self, a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
        return self._op("mean", [a], axis=axis, keepdims=keepdims)

    def concat(self, nodes: Sequence[Node], axis: int = 0) -> Node:
        return self._op("concat", list(nodes), axis=axis)

    def reshape(self, a: Node, shape: tuple[int, ...]) -> Node:
        return self._op("reshape", [a], shape=tuple(shape))

    def getitem(self, a: Node, index) -> Node:
        return self._op("getitem", [a], index=index)

    def cdist_l1(self, p: Node, q: Node) -> Node:
        """Pairwise L1 distances between the rows of ``p`` and of ``q``."""
        return self._op("cdist_l1", [p, q])

    def stop_grad(self, a: Node) -> Node:
        """Identity on the forward pass; blocks every adjoint on the way back."""
        return self._op("stop_grad", [a])


def grad_check(graph: Graph, root: Node, leaf: Node, h: float = 1e-6) -> float:
    """Compare the analytic adjoint of ``leaf`` with central differences.

    Returns ``max |analytic - numeric| / (|analytic| + |numeric| + 1e-12)``.
    The graph is restored to its original leaf binding afterwards.
    """
    graph.forward(root)
    analytic = graph.backward(root)[leaf].copy()
    x0 = graph.value(leaf).copy()
    numeric = np.empty_like(x0)
    try:
        for idx in np.ndindex(x0.shape):
            x = x0.copy()
            x[idx] = x0[idx] + h
            graph.bind(leaf, x)
            f_plus = float(graph.forward(root).sum())
            x[idx] = x0[idx] - h
            graph.bind(leaf, x)
            f_minus = float(graph.forward(root).sum())
            numeric[idx] = (f_plus - f_minus) / (2.0 * h)
    finally:
        graph.bind(leaf, x0)
        graph.forward(root)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0
