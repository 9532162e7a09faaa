"""Run configuration: nested TOML sections mapped onto frozen dataclasses."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import AugmentSpec, SyntheticSpec
from .heads import HeadConfig
from .losses import LossConfig
from .trees import TreeTopology, build_chain_tree, build_cluster_tree, build_tv_tree

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "TreeConfig",
    "EncoderConfig",
    "OptimizerConfig",
    "DataConfig",
    "TrainConfig",
    "EvalConfig",
    "RunConfig",
    "load_config",
    "build_tree",
]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key as ``section.key``."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@dataclass(frozen=True)
class TreeConfig:
    kind: str = "tv"
    edge_weight: float = 0.5
    n_clusters: int = 2
    internal_weight: float = 0.5
    leaf_weight: float = 0.5
    weights: Any = 1.0
    path: str | None = None


@dataclass(frozen=True)
class EncoderConfig:
    """MLP ``d_in -> hidden... -> d_out`` with ReLU between layers."""

    hidden: tuple[int, ...] = (128, 128)
    d_out: int = 32
    activation: str = "relu"
    predictor_hidden: int | None = None

    def widths(self, d_in: int) -> list[int]:
        return [d_in, *self.hidden, self.d_out]


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "auto"
    lr: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float | None = None

    def resolved(self, contrastive: bool) -> OptimizerConfig:
        """Fill ``auto`` settings: Adam(3e-4, wd 1e-4) for InfoNCE, SGD(0.03, wd 5e-5) for SimSiam."""
        kind = self.kind if self.kind != "auto" else ("adam" if contrastive else "sgd")
        lr = self.lr if self.lr is not None else (3e-4 if kind == "adam" else 0.03)
        wd = self.weight_decay if self.weight_decay is not None else (1e-4 if kind == "adam" else 5e-5)
        return dataclasses.replace(self, kind=kind, lr=lr, weight_decay=wd)


@dataclass(frozen=True)
class DataConfig:
    kind: str = "synthetic"
    n_classes: int = 4
    d_in: int = 32
    train_per_class: int = 500
    test_per_class: int = 200
    center_scale: float = 3.0
    noise_scale: float = 1.0
    sigma: float = 0.5
    dropout: float = 0.2
    train_csv: str | None = None
    test_csv: str | None = None

    def synthetic_spec(self, seed: int = 0) -> SyntheticSpec:
        return SyntheticSpec(self.n_classes, self.d_in, self.train_per_class, self.test_per_class,
                             self.center_scale, self.noise_scale, seed)

    @property
    def augment(self) -> AugmentSpec:
        return AugmentSpec(self.sigma, self.dropout)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 256
    probe_size: int = 256
    collapse_threshold: float = 1e-4
    collapse_patience: int = 5
    abort_on_collapse: bool = False


@dataclass(frozen=True)
class EvalConfig:
    k: int = 50
    metric: str = "auto"


@dataclass(frozen=True)
class RunConfig:
    tree: TreeConfig = field(default_factory=TreeConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: tuple[int, ...] = (1, 2, 3)
    output_dir: str = "runs"

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        sections = {f.name: f for f in dataclasses.fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in doc.items():
            if key not in sections:
                raise ConfigError(f"unknown section (expected one of {sorted(sections)})", key)
            if key == "seeds":
                if not isinstance(value, (list, tuple)) or not all(isinstance(s, int) for s in value):
                    raise ConfigError("must be a list of integers", "seeds")
                kwargs[key] = tuple(value)
            elif key == "output_dir":
                kwargs[key] = str(value)
            else:
                if not isinstance(value, dict):
                    raise ConfigError("must be a table", key)
                kwargs[key] = _section(sections[key].default_factory(), value, key)
        if "head" in kwargs and "d_out" in doc.get("head", {}):
            raise ConfigError("set the output width in encoder.d_out", "head.d_out")
        cfg = cls(**kwargs)
        # the head always sees the encoder output width
        cfg = dataclasses.replace(cfg, head=dataclasses.replace(cfg.head, d_out=cfg.encoder.d_out))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                section = {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in dataclasses.asdict(value).items() if v is not None}
                if f.name == "head":
                    section.pop("d_out", None)
                out[f.name] = section
            elif isinstance(value, tuple):
                out[f.name] = list(value)
            else:
                out[f.name] = value
        return out

    def replace(self, **changes) -> RunConfig:
        """Override nested keys given as ``section__key=value``; revalidates."""
        doc = self.to_dict()
        for key, value in changes.items():
            section, _, name = key.partition("__")
            if name:
                doc.setdefault(section, {})[name] = value
            else:
                doc[section] = value
        return RunConfig.from_dict(doc)

    # -- checks ----------------------------------------------------------------

    def validate(self) -> None:
        for name, check in (("head", self.head.validate), ("loss", self.loss.validate)):
            try:
                check()
            except ValueError as exc:
                raise ConfigError(str(exc), name) from None
        if self.head.kind == "none" and self.loss.uses_twd:
            raise ConfigError("TWD objectives need a probability head", "head.kind")
        if self.tree.kind not in ("tv", "cluster", "chain", "file"):
            raise ConfigError(f"unknown tree kind {self.tree.kind!r}", "tree.kind")
        if self.tree.kind == "cluster" and self.head.d_prob % self.tree.n_clusters:
            raise ConfigError(f"d_prob={self.head.d_prob} is not divisible into "
                              f"{self.tree.n_clusters} clusters", "tree.n_clusters")
        if self.tree.kind == "file" and not self.tree.path:
            raise ConfigError("file trees need a path", "tree.path")
        opt = self.optimizer.resolved(self.loss.contrastive)
        if opt.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {opt.kind!r}", "optimizer.kind")
        if opt.lr < 0 or opt.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be nonnegative", "optimizer")
        if self.encoder.d_out < 1 or any(h < 1 for h in self.encoder.hidden):
            raise ConfigError("layer widths must be positive", "encoder")
        if self.encoder.activation != "relu":
            raise ConfigError("only relu is supported", "encoder.activation")
        if self.data.kind not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data kind {self.data.kind!r}", "data.kind")
        if self.data.kind == "csv" and not (self.data.train_csv and self.data.test_csv):
            raise ConfigError("csv data needs train_csv and test_csv", "data")
        try:
            self.data.synthetic_spec().validate()
            self.data.augment.validate()
        except ValueError as exc:
            raise ConfigError(str(exc), "data") from None
        if self.train.epochs < 0:
            raise ConfigError("must be nonnegative", "train.epochs")
        if self.train.batch_size < 2:
            raise ConfigError("must be at least 2", "train.batch_size")
        if self.train.probe_size < 2:
            raise ConfigError("must be at least 2", "train.probe_size")
        if self.eval.k < 1:
            raise ConfigError("must be positive", "eval.k")
        if self.eval.metric not in ("auto", "twd", "tv", "l1", "cosine"):
            raise ConfigError(f"unknown metric {self.eval.metric!r}", "eval.metric")
        if self.eval.metric in ("twd", "tv") and self.head.kind == "none":
            raise ConfigError("probability metrics need a probability head", "eval.metric")
        if not self.seeds:
            raise ConfigError("at least one seed is required", "seeds")
        if self.loss.jd_mode == "tree" and self.tree.kind != "file":
            if not build_tree(self).has_unit_paths():
                raise ConfigError("jd_mode='tree' needs B^T w = 1", "loss.jd_mode")

    @property
    def predictor_hidden(self) -> int:
        if self.encoder.predictor_hidden is not None:
            return self.encoder.predictor_hidden
        return max(1, self.head.d_prob // 4)


def _section(default, values: dict, name: str):
    fields = {f.name: f for f in dataclasses.fields(default)}
    for key in values:
        if key not in fields:
            raise ConfigError(f"unknown key (expected one of {sorted(fields)})", f"{name}.{key}")
    coerced = {}
    for key, value in values.items():
        current = getattr(default, key)
        if isinstance(current, tuple):
            value = tuple(value) if isinstance(value, (list, tuple)) else (value,)
        elif isinstance(current, bool) and not isinstance(value, bool):
            raise ConfigError("must be true or false", f"{name}.{key}")
        elif isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        elif current is not None and not isinstance(value, type(current)) and key != "weights":
            raise ConfigError(f"expected {type(current).__name__}, got {type(value).__name__}",
                              f"{name}.{key}")
        coerced[key] = value
    return dataclasses.replace(default, **coerced)


def load_config(path: str | Path, **overrides) -> RunConfig:
    """Parse a TOML run configuration. Syntax errors carry the line and column."""
    text = Path(path).read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = RunConfig.from_dict(doc)
    return cfg.replace(**overrides) if overrides else cfg


def build_tree(cfg: RunConfig) -> TreeTopology:
    """Topology over the ``d_prob`` leaves of the configured head."""
    t, n = cfg.tree, cfg.head.d_prob
    if t.kind == "tv":
        return build_tv_tree(n, t.edge_weight)
    if t.kind == "cluster":
        return build_cluster_tree(t.n_clusters, n // t.n_clusters, t.internal_weight, t.leaf_weight)
    if t.kind == "chain":
        return build_chain_tree(n, t.weights)
    topo = TreeTopology.from_json(Path(t.path).read_text())
    if topo.n_leaves != n:
        raise ConfigError(f"tree file has {topo.n_leaves} leaves, head emits {n}", "tree.path")
    return topo
