"""Command-line entry point: ``twassl verify|train|eval|ablate``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_tree, load_config
from .data import knn_classify
from .train import (RunRecord, atomic_write, embed, eval_metric, load_checkpoint, load_data,
                    save_checkpoint, seed_streams, train)
from .verify import SUITES, run_suite

__all__ = ["main", "build_parser", "parse_head_spec", "aggregate"]

log = logging.getLogger("twassl")

ABLATION_AXES = ("lambda_jd", "knn_k", "head")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twassl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run oracle sweeps")
    p.add_argument("suite", choices=[*SUITES, "all"])
    p.add_argument("--trials", type=int, default=None, help="cases per family (suite default)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="directory for CSV output")

    p = sub.add_parser("train", help="train one run per configured seed")
    _run_args(p)

    p = sub.add_parser("eval", help="KNN accuracy of a checkpoint")
    p.add_argument("checkpoint", type=Path, help="checkpoint manifest (.json)")
    p.add_argument("--config", type=Path, default=None,
                   help="take the data section from this config instead of the checkpoint")
    p.add_argument("--metric", choices=["auto", "twd", "tv", "l1", "cosine"], default=None)
    p.add_argument("-k", "--k", type=int, default=None, help="neighbours (config default)")
    p.add_argument("--split", choices=["test", "train"], default="test")

    p = sub.add_parser("ablate", help="grid of runs along one axis")
    _run_args(p)
    p.add_argument("--axis", choices=ABLATION_AXES, required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated axis values, e.g. 0,0.1,0.2 or softmax,softmax+jd")
    return parser


def _run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--seed", type=int, action="append", default=None,
                   help="run this seed instead of the configured list (repeatable)")
    p.add_argument("--out", type=Path, default=None, help="output directory (config output_dir)")
    p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")


# -- helpers -------------------------------------------------------------------

def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_task(args):
    doc, seed, out, stem = args
    cfg = RunConfig.from_dict(doc)
    rec, params = train(cfg, seed, return_params=True)
    if out is not None:
        rec.write_jsonl(out / f"{stem}.jsonl")
        save_checkpoint(out, cfg, seed, rec.epochs_run, params, stem=f"{stem}.checkpoint")
    return rec, params


def _map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def aggregate(values) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"n": 0, "mean": None, "std": None}
    return {"n": len(vals), "mean": float(np.mean(vals)), "std": float(np.std(vals))}


def parse_head_spec(spec: str, base: RunConfig) -> RunConfig:
    """``softmax``, ``sem``, ``arcface[-learned|-pe|-dct]``, each with an optional ``+jd``.

    ``+jd`` keeps the base ``lambda_jd`` (0.1 if the base has none); without it
    ``lambda_jd`` is 0.
    """
    name, _, suffix = spec.strip().partition("+")
    if suffix not in ("", "jd"):
        raise ConfigError(f"unknown head modifier {suffix!r}", "head")
    lam = (base.loss.lambda_jd or 0.1) if suffix else 0.0
    kind, _, key = name.partition("-")
    changes = {"head__kind": kind, "loss__lambda_jd": lam}
    if kind == "arcface":
        changes["head__key"] = key or base.head.key
    elif key:
        raise ConfigError(f"head {kind!r} takes no key", "head")
    return base.replace(**changes)


# -- commands --------------------------------------------------------------------

def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        report = run_suite(name, args.trials, args.seed)
        if args.out is not None:
            atomic_write(args.out / f"verify_{name}.csv", report.to_csv())
        print(report.summary())
        ok &= report.passed
    return 0 if ok else 1


def _seeds(cfg: RunConfig, args) -> list[int]:
    return list(args.seed) if args.seed else list(cfg.seeds)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _prepare_out(args.out or Path(cfg.output_dir), args.force)
    seeds = _seeds(cfg, args)
    tasks = [(cfg.to_dict(), s, out, f"run_seed{s}") for s in seeds]
    records = [rec for rec, _ in _map(_train_task, tasks, args.jobs)]
    agg = {"config": cfg.to_dict(), "seeds": seeds,
           "status": {str(r.seed): r.status for r in records},
           "final_accuracy": aggregate(r.final_accuracy for r in records)}
    atomic_write(out / "aggregate.json", json.dumps(agg, indent=2))
    for r in records:
        acc = "n/a" if r.final_accuracy is None else f"{r.final_accuracy:.4f}"
        print(f"seed {r.seed}: status={r.status} epochs={r.epochs_run} accuracy={acc}")
    a = agg["final_accuracy"]
    if a["n"]:
        print(f"accuracy {a['mean']:.4f} ± {a['std']:.4f} over {a['n']} runs")
    return 1 if any(r.status == "diverged" for r in records) else 0


def cmd_eval(args) -> int:
    cfg, seed, _, params = load_checkpoint(args.checkpoint)
    if args.config is not None:
        other = load_config(args.config)
        if other.head.kind != cfg.head.kind:
            raise ConfigError(f"checkpoint head is {cfg.head.kind!r}, config has {other.head.kind!r}",
                              "head.kind")
        cfg = cfg.replace(data=other.to_dict()["data"])
    train_set, test_set = load_data(cfg, seed_streams(seed)["data"])
    d_in = params["W0"].shape[0]
    if train_set.X.shape[1] != d_in:
        raise ConfigError(f"data has {train_set.X.shape[1]} features, checkpoint expects {d_in}",
                          "data.d_in")
    metric = eval_metric(cfg, build_tree(cfg), args.metric)
    k = args.k or cfg.eval.k
    query = train_set if args.split == "train" else test_set
    acc = knn_classify(embed(cfg, params, train_set.X), train_set.y,
                       embed(cfg, params, query.X), query.y, k, metric)
    log.info("checkpoint %s: %s accuracy %.6f (K=%d, metric=%s)", args.checkpoint, args.split,
             acc, k, metric.kind)
    print(f"accuracy {acc:.6f}")
    return 0


def _parse_values(axis: str, raw: str) -> list:
    items = [v.strip() for v in raw.split(",") if v.strip()]
    if not items:
        raise ConfigError("no values given", "--values")
    if axis == "lambda_jd":
        return [float(v) for v in items]
    if axis == "knn_k":
        return [int(v) for v in items]
    return items


def cmd_ablate(args) -> int:
    base = load_config(args.config)
    values = _parse_values(args.axis, args.values)
    # validate every cell before any training starts
    if args.axis == "lambda_jd":
        cells = [base.replace(loss__lambda_jd=v) for v in values]
    elif args.axis == "head":
        cells = [parse_head_spec(v, base) for v in values]
    else:
        if any(k < 1 for k in values):
            raise ConfigError("K must be positive", "--values")
        cells = [base]
    out = _prepare_out(args.out or Path(base.output_dir), args.force)
    seeds = _seeds(base, args)
    tasks = [(c.to_dict(), s, None, "") for c in cells for s in seeds]
    results = _map(_train_task, tasks, args.jobs)

    rows: list[dict] = []
    if args.axis == "knn_k":
        for (rec, params), s in zip(results, seeds):
            if rec.status == "diverged":
                rows += [{"value": k, "seed": s, "accuracy": None, "status": rec.status} for k in values]
                continue
            train_set, test_set = load_data(base, seed_streams(s)["data"])
            metric = eval_metric(base, build_tree(base))
            tr, te = embed(base, params, train_set.X), embed(base, params, test_set.X)
            for k in values:
                acc = knn_classify(tr, train_set.y, te, test_set.y, min(k, len(train_set)), metric)
                rows.append({"value": k, "seed": s, "accuracy": acc, "status": rec.status})
    else:
        for (rec, _), (doc, s, _, _), v in zip(results, tasks, [v for v in values for _ in seeds]):
            rows.append({"value": v, "seed": s, "accuracy": rec.final_accuracy, "status": rec.status})

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["row", "axis", "value", "seed", "accuracy", "std", "status"],
                            lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({"row": "run", "axis": args.axis, "std": "", **r})
    summary = []
    for v in values:
        agg = aggregate(r["accuracy"] for r in rows if r["value"] == v)
        summary.append((v, agg))
        writer.writerow({"row": "aggregate", "axis": args.axis, "value": v, "seed": "all",
                         "accuracy": agg["mean"], "std": agg["std"], "status": f"n={agg['n']}"})
    atomic_write(out / f"ablate_{args.axis}.csv", buf.getvalue())
    for v, agg in summary:
        if agg["n"]:
            print(f"{args.axis}={v}: {agg['mean']:.4f} ± {agg['std']:.4f} (n={agg['n']})")
        else:
            print(f"{args.axis}={v}: no finished runs")
    return 1 if any(r["status"] == "diverged" for r in rows) else 0


COMMANDS = {"verify": cmd_verify, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileExistsError, FileNotFoundError) as exc:
        print(f"twassl {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
