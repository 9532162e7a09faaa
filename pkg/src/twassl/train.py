"""Desk-scale self-supervised training: MLP encoder, probability head, loop, records.

All randomness for a run comes from one integer seed, split into the
independent ``data``, ``init``, ``augment`` and ``shuffle`` streams.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Graph, Node, NonFiniteError
from .config import RunConfig, build_tree
from .data import LabeledSet, knn_classify, load_csv, make_synthetic, two_views
from .distances import DistanceKind
from .heads import arcface_head, make_key_matrix, sem_head, softmax_head, head_node
from .losses import (collapse_metrics, infonce_cosine_loss, infonce_twd_loss, simsiam_cosine_loss,
                     simsiam_twd_loss)
from .optim import NonFiniteGradientError, make_optimizer, optimizer_step
from .trees import TreeTopology

__all__ = [
    "STREAMS",
    "seed_streams",
    "init_params",
    "encoder_forward",
    "embed",
    "loss_and_grads",
    "load_data",
    "eval_metric",
    "RunRecord",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "atomic_write",
]

log = logging.getLogger(__name__)

STREAMS = ("data", "init", "augment", "shuffle")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(child) for name, child in zip(STREAMS, children)}


# -- model -------------------------------------------------------------------

def init_params(cfg: RunConfig, d_in: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-normal weights and zero biases for the encoder (and SimSiam predictor)."""
    params: dict[str, np.ndarray] = {}
    widths = cfg.encoder.widths(d_in)
    for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"W{layer}"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params[f"b{layer}"] = np.zeros(fan_out)
    if not cfg.loss.contrastive:
        d, h = cfg.encoder.d_out, cfg.predictor_hidden
        params["P0"] = rng.standard_normal((d, h)) * np.sqrt(2.0 / d)
        params["c0"] = np.zeros(h)
        params["P1"] = rng.standard_normal((h, d)) * np.sqrt(2.0 / h)
        params["c1"] = np.zeros(d)
    key = make_key_matrix(cfg.head, rng) if cfg.head.kind == "arcface" else None
    if key is not None and key.learned:
        params["K"] = key.K
    return params


def _n_layers(params: dict) -> int:
    return sum(1 for k in params if k.startswith("W"))


def encoder_forward(params: dict[str, np.ndarray], x) -> np.ndarray:
    """ReLU MLP; the last layer is linear."""
    h = np.asarray(x, dtype=np.float64)
    n = _n_layers(params)
    for layer in range(n):
        h = h @ params[f"W{layer}"] + params[f"b{layer}"]
        if layer < n - 1:
            h = np.maximum(h, 0.0)
    return h


def _key(cfg: RunConfig, params: dict) -> np.ndarray | None:
    if cfg.head.kind != "arcface":
        return None
    if "K" in params:
        return params["K"]
    return make_key_matrix(cfg.head).K


def embed(cfg: RunConfig, params: dict[str, np.ndarray], X, chunk: int = 1024) -> np.ndarray:
    """Representations used for evaluation: the head applied to the encoder output."""
    X = np.asarray(X, dtype=np.float64)
    K = _key(cfg, params)
    out = []
    for s in range(0, X.shape[0], chunk):
        f = encoder_forward(params, X[s:s + chunk])
        if cfg.head.kind == "softmax":
            f = softmax_head(f)
        elif cfg.head.kind == "sem":
            f = sem_head(f, cfg.head.L, cfg.head.V)
        elif cfg.head.kind == "arcface":
            f = arcface_head(f, K, cfg.head.eta)
        out.append(f)
    return np.vstack(out)


def _encoder_node(g: Graph, P: dict[str, Node], x: Node) -> Node:
    n = _n_layers(P)
    h = x
    for layer in range(n):
        h = g.add(g.matmul(h, P[f"W{layer}"]), P[f"b{layer}"])
        if layer < n - 1:
            h = g.relu(h)
    return h


def _predictor_node(g: Graph, P: dict[str, Node], f: Node) -> Node:
    hidden = g.relu(g.add(g.matmul(f, P["P0"]), P["c0"]))
    return g.add(g.matmul(hidden, P["P1"]), P["c1"])


def loss_and_grads(cfg: RunConfig, T: TreeTopology, params: dict[str, np.ndarray], u1, u2):
    """Loss value and parameter gradients for one two-view batch."""
    g = Graph()
    P = {name: g.leaf(value, name=name) for name, value in params.items()}
    R = len(u1)
    f = _encoder_node(g, P, g.const(np.vstack([u1, u2])))
    key = P.get("K")
    if key is None and cfg.head.kind == "arcface":
        key = g.const(_key(cfg, params))
    lc = cfg.loss
    if lc.contrastive:
        a = head_node(g, cfg.head, f, key)
        a1, a2 = a[:R], a[R:]
        if lc.uses_twd:
            loss = infonce_twd_loss(g, a1, a2, T, lc.tau, lc.lambda_jd, lc.jd_mode)
        else:
            loss = infonce_cosine_loss(g, a1, a2, lc.tau)
    else:
        target = head_node(g, cfg.head, f, key)
        online = head_node(g, cfg.head, _predictor_node(g, P, f), key)
        on1, on2 = online[:R], online[R:]
        tg1, tg2 = g.stop_grad(target[:R]), g.stop_grad(target[R:])
        if lc.uses_twd:
            loss = simsiam_twd_loss(g, on1, on2, tg1, tg2, T, lc.lambda_jd, lc.jd_mode)
        else:
            loss = simsiam_cosine_loss(g, on1, on2, tg1, tg2)
    adj = g.backward(loss)
    return float(loss.value), {name: adj[node] for name, node in P.items()}


# -- data and evaluation -----------------------------------------------------

def load_data(cfg: RunConfig, rng: np.random.Generator) -> tuple[LabeledSet, LabeledSet]:
    if cfg.data.kind == "csv":
        train_set, test_set = load_csv(cfg.data.train_csv), load_csv(cfg.data.test_csv)
        if train_set.X.shape[1] != test_set.X.shape[1]:
            raise ValueError("train and test CSV files have different feature counts")
        return train_set, test_set
    return make_synthetic(cfg.data.synthetic_spec(), rng)


def eval_metric(cfg: RunConfig, T: TreeTopology, metric: str | None = None) -> DistanceKind:
    """``auto`` is TWD on the training tree for TWD objectives, cosine otherwise."""
    metric = metric or cfg.eval.metric
    if metric == "auto":
        metric = "twd" if cfg.loss.uses_twd else "cosine"
    if metric == "cosine" and cfg.loss.uses_twd:
        log.info("cosine KNN on probability embeddings (non-default for TWD objectives)")
    return DistanceKind(metric, T if metric == "twd" else None)


# -- records -------------------------------------------------------------------

@dataclass
class RunRecord:
    config: dict
    seed: int
    losses: list[float] = field(default_factory=list)
    collapse: list[dict] = field(default_factory=list)
    initial: dict = field(default_factory=dict)
    final_accuracy: float | None = None
    status: str = "running"
    collapse_epoch: int | None = None
    message: str = ""
    wall_clock: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.losses)

    def jsonl_rows(self) -> list[dict]:
        rows = [{"type": "config", "seed": self.seed, "config": self.config, "initial": self.initial}]
        for epoch, (loss, metrics) in enumerate(zip(self.losses, self.collapse), start=1):
            rows.append({"type": "epoch", "epoch": epoch, "loss": loss, **metrics})
        rows.append({"type": "final", "status": self.status, "final_accuracy": self.final_accuracy,
                     "collapse_epoch": self.collapse_epoch, "message": self.message,
                     "wall_clock": self.wall_clock})
        return rows

    def write_jsonl(self, path: str | Path) -> None:
        atomic_write(path, "".join(json.dumps(row) + "\n" for row in self.jsonl_rows()))

    @classmethod
    def read_jsonl(cls, path: str | Path) -> RunRecord:
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        head, *epochs, final = rows
        rec = cls(config=head["config"], seed=head["seed"], initial=head["initial"])
        for row in epochs:
            rec.losses.append(row.pop("loss"))
            row.pop("type"), row.pop("epoch")
            rec.collapse.append(row)
        for key in ("status", "final_accuracy", "collapse_epoch", "message", "wall_clock"):
            setattr(rec, key, final[key])
        return rec

    def as_dict(self) -> dict:
        return asdict(self)


def atomic_write(path: str | Path, data: str | bytes) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb" if isinstance(data, bytes) else "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- training loop -------------------------------------------------------------

def _probe_metrics(cfg: RunConfig, T: TreeTopology, params: dict, probe: np.ndarray) -> dict:
    if cfg.head.kind == "none":
        return {}
    return collapse_metrics(embed(cfg, params, probe), T if cfg.loss.uses_twd else None).as_dict()


def train(cfg: RunConfig, seed: int, return_params: bool = False):
    """Run one seed of ``cfg``.

    Returns the :class:`RunRecord` (and the final parameters when
    ``return_params``). A non-finite loss or gradient stops the run with
    status ``"diverged"``; the record up to that point is kept.
    """
    start = time.perf_counter()
    streams = seed_streams(seed)
    train_set, test_set = load_data(cfg, streams["data"])
    if train_set.X.shape[1] != cfg.data.d_in and cfg.data.kind == "synthetic":
        raise ValueError("data dimension mismatch")
    T = build_tree(cfg)
    params = init_params(cfg, train_set.X.shape[1], streams["init"])
    opt = make_optimizer(cfg.optimizer.resolved(cfg.loss.contrastive),
                         unit_columns=("K",) if "K" in params else ())
    metric = eval_metric(cfg, T)
    k = min(cfg.eval.k, len(train_set))
    probe = train_set.X[:cfg.train.probe_size]
    aug = cfg.data.augment
    rec = RunRecord(config=cfg.to_dict(), seed=seed)

    def accuracy(p) -> float:
        return knn_classify(embed(cfg, p, train_set.X), train_set.y,
                            embed(cfg, p, test_set.X), test_set.y, k, metric)

    rec.initial = {"accuracy": accuracy(params), **_probe_metrics(cfg, T, params, probe)}
    below = 0
    n, bs = len(train_set), cfg.train.batch_size
    try:
        for epoch in range(1, cfg.train.epochs + 1):
            perm = streams["shuffle"].permutation(n)
            batch_losses = []
            for s in range(0, n, bs):
                idx = perm[s:s + bs]
                if idx.size < 2:
                    continue
                u1, u2 = two_views(train_set.X[idx], aug, streams["augment"])
                loss, grads = loss_and_grads(cfg, T, params, u1, u2)
                params = optimizer_step(opt, params, grads)
                batch_losses.append(loss)
            rec.losses.append(float(np.mean(batch_losses)))
            metrics = _probe_metrics(cfg, T, params, probe)
            rec.collapse.append(metrics)
            if metrics and metrics["mean_pairwise_twd"] < cfg.train.collapse_threshold:
                below += 1
                if below >= cfg.train.collapse_patience and rec.collapse_epoch is None:
                    rec.collapse_epoch = epoch
                    log.warning("seed %d: representation collapse detected at epoch %d", seed, epoch)
                    if cfg.train.abort_on_collapse:
                        rec.status = "collapsed"
                        break
            else:
                below = 0
    except (NonFiniteError, NonFiniteGradientError) as exc:
        rec.status = "diverged"
        rec.message = str(exc)
        log.error("seed %d diverged at epoch %d: %s", seed, len(rec.losses) + 1, exc)
    if rec.status == "running":
        rec.status = "ok"
    if rec.status != "diverged":
        rec.final_accuracy = accuracy(params)
    rec.wall_clock = time.perf_counter() - start
    return (rec, params) if return_params else rec


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(directory: str | Path, cfg: RunConfig, seed: int, step: int,
                    params: dict[str, np.ndarray], stem: str = "checkpoint") -> Path:
    """Write ``<stem>.json`` (manifest) and ``<stem>.f64`` (little-endian float64 blob)."""
    directory = Path(directory)
    layout, offset, chunks = [], 0, []
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        offset += arr.size
        chunks.append(arr.reshape(-1))
    blob = np.concatenate(chunks).astype("<f8").tobytes() if chunks else b""
    atomic_write(directory / f"{stem}.f64", blob)
    manifest = {"config": cfg.to_dict(), "seed": seed, "step": step,
                "blob": f"{stem}.f64", "params": layout}
    path = directory / f"{stem}.json"
    atomic_write(path, json.dumps(manifest, indent=2))
    return path


def load_checkpoint(path: str | Path):
    """Return ``(config, seed, step, params)`` from a manifest written by :func:`save_checkpoint`."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    flat = np.frombuffer((path.parent / manifest["blob"]).read_bytes(), dtype="<f8")
    params = {}
    for entry in manifest["params"]:
        chunk = flat[entry["offset"]:entry["offset"] + entry["count"]]
        if chunk.size != entry["count"]:
            raise ValueError(f"checkpoint blob too short for {entry['name']!r}")
        params[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
    cfg = RunConfig.from_dict(manifest["config"])
    return cfg, manifest["seed"], manifest["step"], params
