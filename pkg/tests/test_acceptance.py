"""Acceptance criteria, each at its stated tolerance.

Every test logs one ``PASS``/``FAIL`` line, shown in the terminal summary.
Criteria 8 and 9 train 15 small models (about 8 minutes on one CPU core).
"""

import functools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from twassl.cli import parse_head_spec
from twassl.config import load_config
from twassl.distances import twd
from twassl.heads import (HeadConfig, arcface_head, dct_key_matrix, learned_key_matrix,
                          pe_key_matrix, sem_head, softmax_head)
from twassl.train import train
from twassl.trees import build_tv_tree
from twassl.verify import run_suite

CONFIGS = Path(__file__).parents[1] / "configs"
SEEDS = (1, 2, 3)
CHANCE = 0.25
TRAIN_BUDGET = 15 * 60.0


def record(log, number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    log.append(line)
    print(line)
    return ok


def suite_check(log, number, names, time_limit=None):
    reports = [run_suite(n) for n in names]
    elapsed = sum(r.elapsed for r in reports)
    ok = all(r.passed for r in reports) and (time_limit is None or elapsed < time_limit)
    detail = "; ".join(r.summary() for r in reports)
    if time_limit is not None:
        detail += f"; runtime {elapsed:.1f}s (limit {time_limit:.0f}s)"
    return record(log, number, ok, detail)


def test_1_closed_form_vs_lp(acceptance_log):
    assert suite_check(acceptance_log, 1, ["twd-lp"], time_limit=30.0)


def test_2_robust_twd_is_tv(acceptance_log):
    assert suite_check(acceptance_log, 2, ["rtwd-tv"], time_limit=60.0)


def test_3_jeffrey_bound_and_pinsker(acceptance_log):
    assert suite_check(acceptance_log, 3, ["jd-bound", "pinsker"])


def test_4_tv_special_case(acceptance_log):
    rng = np.random.default_rng(4)
    worst = 0.0
    for n in (2, 4, 8, 16, 32):
        T = build_tv_tree(n, 0.5)
        for _ in range(1000):
            a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
            worst = max(worst, abs(twd(T, a, b) - 0.5 * np.abs(a - b).sum()))
    assert record(acceptance_log, 4, worst <= 1e-12,
                  f"5000 pairs, max |twd - L1/2| {worst:.2e} (tol 1e-12)")


def test_5_head_validity(acceptance_log):
    rng = np.random.default_rng(5)
    d, n = 32, 10_000
    # logits across many scales, including saturating ones
    F = rng.standard_normal((n, d)) * 10.0 ** rng.uniform(-3, 3, size=(n, 1))
    learned = learned_key_matrix(d, None, rng)
    outputs = {
        "softmax": softmax_head(F),
        "sem(4,8)": sem_head(F, 4, 8),
        "sem(16,2)": sem_head(F, 16, 2),
        "af-learned": arcface_head(F, learned, 0.1),
        "af-pe": arcface_head(F, pe_key_matrix(d), 0.1),
        "af-dct": arcface_head(F, dct_key_matrix(d), 0.1),
    }
    simplex_err = max(max(float(-A.min()), float(np.abs(A.sum(1) - 1).max())) for A in outputs.values())
    dct_err = max(max(np.abs(K.T @ K - np.eye(k)).max(), np.abs(K @ K.T - np.eye(k)).max())
                  for k in range(2, 65) for K in [dct_key_matrix(k).K])
    norm_err = max(float(np.abs(np.linalg.norm(K, axis=0) - 1).max())
                   for k in range(2, 65, 2)
                   for K in (pe_key_matrix(k).K, learned_key_matrix(k, None, rng).K))
    ok = simplex_err <= 1e-9 and dct_err <= 1e-10 and norm_err <= 1e-9
    assert record(acceptance_log, 5, ok,
                  f"{len(outputs)} heads x {n} inputs, simplex err {simplex_err:.1e} (tol 1e-9); "
                  f"DCT orthonormality err {dct_err:.1e} (tol 1e-10); "
                  f"PE/learned column norm err {norm_err:.1e} (tol 1e-9)")


def test_6_gradient_fidelity(acceptance_log):
    assert suite_check(acceptance_log, 6, ["gradcheck"])


def test_7_sinkhorn(acceptance_log):
    assert suite_check(acceptance_log, 7, ["sinkhorn"])


# -- criteria 8 and 9: desk-scale training -------------------------------------------

def _configs():
    nce = load_config(CONFIGS / "infonce_af_dct_jd.toml")
    return {
        "infonce-af-dct-jd": nce,
        "infonce-softmax": parse_head_spec("softmax", nce),
        "infonce-softmax-jd": parse_head_spec("softmax+jd", nce),
        "simsiam-softmax": load_config(CONFIGS / "simsiam_softmax.toml"),
        "simsiam-af-dct-jd": load_config(CONFIGS / "simsiam_af_dct_jd.toml"),
    }


@functools.lru_cache(maxsize=None)
def run(name, seed):
    return train(_configs()[name], seed)


def runs(name):
    return [run(name, s) for s in SEEDS]


def _accs(recs):
    return [r.final_accuracy for r in recs]


def _fmt(values):
    return "[" + ", ".join("n/a" if v is None else f"{v:.4f}" for v in values) + "]"


def _clean(rec):
    return rec.status == "ok" and all(math.isfinite(x) for x in rec.losses)


def test_8a_infonce_af_dct_jd(acceptance_log):
    recs = runs("infonce-af-dct-jd")
    accs = _accs(recs)
    mean = float(np.mean(accs))
    ok = all(_clean(r) for r in recs) and mean >= 0.90
    assert record(acceptance_log, "8a", ok,
                  f"InfoNCE+TV+AF(DCT)+JD KNN(K=50) accuracy {_fmt(accs)}, mean {mean:.4f} (>= 0.90)")


def test_8b_jd_dominates_softmax(acceptance_log):
    plain, jd = runs("infonce-softmax"), runs("infonce-softmax-jd")
    m0, m1 = float(np.mean(_accs(plain))), float(np.mean(_accs(jd)))
    ok = all(_clean(r) for r in jd) and m1 >= m0
    assert record(acceptance_log, "8b", ok,
                  f"Softmax+JD {_fmt(_accs(jd))} mean {m1:.4f} vs Softmax {_fmt(_accs(plain))} "
                  f"mean {m0:.4f}; JD runs {[r.status for r in jd]}")


def test_8c_simsiam_collapse_contrast(acceptance_log):
    soft, af = runs("simsiam-softmax"), runs("simsiam-af-dct-jd")
    collapsed = [r.collapse_epoch is not None or abs(r.final_accuracy - CHANCE) <= 0.05 for r in soft]
    af_mean = float(np.mean(_accs(af)))
    ok = all(collapsed) and all(_clean(r) for r in af) and af_mean >= 0.85
    assert record(acceptance_log, "8c", ok,
                  f"SimSiam+Softmax collapse epochs {[r.collapse_epoch for r in soft]} "
                  f"accuracy {_fmt(_accs(soft))}; SimSiam+AF(DCT)+JD accuracy {_fmt(_accs(af))} "
                  f"mean {af_mean:.4f} (>= 0.85)")


def test_8_runtime_budget(acceptance_log):
    names = ("infonce-af-dct-jd", "infonce-softmax", "infonce-softmax-jd", "simsiam-softmax",
             "simsiam-af-dct-jd")
    total = sum(r.wall_clock for n in names for r in runs(n))
    assert record(acceptance_log, "8 (budget)", total < TRAIN_BUDGET,
                  f"{len(names) * len(SEEDS)} runs, {total:.0f}s total (limit {TRAIN_BUDGET:.0f}s)")


def test_9_determinism(acceptance_log):
    first = run("simsiam-softmax", SEEDS[0])
    start = time.perf_counter()
    again = train(_configs()["simsiam-softmax"], SEEDS[0])
    same = (np.array(first.losses).tobytes() == np.array(again.losses).tobytes()
            and first.final_accuracy == again.final_accuracy)
    assert record(acceptance_log, 9, same,
                  f"SimSiam+Softmax seed {SEEDS[0]} rerun: {len(again.losses)} epoch losses "
                  f"{'bitwise identical' if same else 'differ'} ({time.perf_counter() - start:.0f}s)")
