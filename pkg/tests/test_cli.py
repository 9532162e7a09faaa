import csv
import json

import numpy as np
import pytest

from twassl.cli import aggregate, build_parser, main, parse_head_spec
from twassl.config import ConfigError, RunConfig
from twassl.train import RunRecord

TINY = """
seeds = [1, 2, 3]
[data]
d_in = 8
train_per_class = 20
test_per_class = 10
[encoder]
hidden = [16]
d_out = 8
[train]
epochs = 2
batch_size = 16
probe_size = 16
[eval]
k = 5
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestVerify:
    def test_pass(self, tmp_path, capsys):
        assert main(["verify", "rtwd-tv", "--trials", "3", "--out", str(tmp_path)]) == 0
        assert capsys.readouterr().out.startswith("PASS rtwd-tv: 36 cases")
        rows = read_csv(tmp_path / "verify_rtwd-tv.csv")
        assert len(rows) == 36 and float(max(r["abs_err"] for r in rows)) <= 1e-7

    def test_twd_lp_columns(self, tmp_path):
        assert main(["verify", "twd-lp", "--trials", "2", "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "verify_twd-lp.csv")
        assert list(rows[0]) == ["topology", "n_leaves", "trial", "twd", "lp_value", "abs_err"]

    def test_dct(self, capsys):
        assert main(["verify", "dct-orth"]) == 0
        assert "63 cases" in capsys.readouterr().out

    def test_failure_exit_code(self, monkeypatch, capsys):
        from twassl import verify

        def broken(trials, rng):
            rep = verify.SweepReport("broken", ["abs_err"], 1e-9)
            rep.rows.append({"abs_err": 1.0})
            return rep

        monkeypatch.setitem(verify.SUITES, "dct-orth", (broken, 1))
        assert main(["verify", "dct-orth"]) == 1
        assert capsys.readouterr().out.startswith("FAIL")

    def test_unknown_suite(self):
        with pytest.raises(SystemExit) as info:
            main(["verify", "nope"])
        assert info.value.code == 2


class TestTrain:
    def test_three_seeds(self, config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["train", "--config", str(config), "--out", str(out)]) == 0
        for s in (1, 2, 3):
            rec = RunRecord.read_jsonl(out / f"run_seed{s}.jsonl")
            assert rec.seed == s and rec.epochs_run == 2
            assert (out / f"run_seed{s}.checkpoint.json").exists()
        agg = json.loads((out / "aggregate.json").read_text())
        assert agg["seeds"] == [1, 2, 3] and agg["final_accuracy"]["n"] == 3
        assert "±" in capsys.readouterr().out
        # the embedded snapshot re-parses to the same config
        assert RunConfig.from_dict(agg["config"]) == RunConfig.from_dict(rec.config)

    def test_refuses_non_empty(self, config, tmp_path, capsys):
        out = tmp_path / "out"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert main(["train", "--config", str(config), "--out", str(out)]) == 2
        assert "--force" in capsys.readouterr().err
        assert main(["train", "--config", str(config), "--out", str(out), "--seed", "4",
                     "--force"]) == 0
        assert (out / "keep.txt").exists() and (out / "run_seed4.jsonl").exists()

    def test_invalid_config_before_training(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text(TINY + '[head]\nkind = "sem"\nL = 3\nV = 3\n')
        out = tmp_path / "out"
        assert main(["train", "--config", str(path), "--out", str(out)]) == 2
        assert "head" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_config(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path / "o")]) == 2

    def test_jobs_match_serial(self, config, tmp_path):
        main(["train", "--config", str(config), "--out", str(tmp_path / "a"), "--seed", "1", "--seed", "2"])
        main(["train", "--config", str(config), "--out", str(tmp_path / "b"), "--seed", "1", "--seed", "2",
              "--jobs", "2"])
        for s in (1, 2):
            a = RunRecord.read_jsonl(tmp_path / "a" / f"run_seed{s}.jsonl")
            b = RunRecord.read_jsonl(tmp_path / "b" / f"run_seed{s}.jsonl")
            assert a.losses == b.losses and a.final_accuracy == b.final_accuracy


class TestEval:
    @pytest.fixture
    def checkpoint(self, config, tmp_path):
        out = tmp_path / "out"
        main(["train", "--config", str(config), "--out", str(out), "--seed", "1"])
        return out / "run_seed1.checkpoint.json"

    def test_matches_training(self, checkpoint, capsys):
        rec = RunRecord.read_jsonl(checkpoint.parent / "run_seed1.jsonl")
        capsys.readouterr()
        assert main(["eval", str(checkpoint)]) == 0
        assert capsys.readouterr().out.strip() == f"accuracy {rec.final_accuracy:.6f}"

    def test_train_split_k1(self, checkpoint, capsys):
        capsys.readouterr()
        assert main(["eval", str(checkpoint), "--split", "train", "-k", "1"]) == 0
        assert capsys.readouterr().out.strip() == "accuracy 1.000000"

    def test_cosine_logged(self, checkpoint, capsys, caplog):
        caplog.set_level("INFO", logger="twassl")
        assert main(["eval", str(checkpoint), "--metric", "cosine"]) == 0
        assert "non-default" in caplog.text

    def test_head_mismatch(self, checkpoint, tmp_path, capsys):
        other = tmp_path / "other.toml"
        other.write_text(TINY + '[head]\nkind = "arcface"\n')
        assert main(["eval", str(checkpoint), "--config", str(other)]) == 2
        assert "head" in capsys.readouterr().err

    def test_dimension_mismatch(self, checkpoint, tmp_path, capsys):
        other = tmp_path / "other.toml"
        other.write_text(TINY.replace("d_in = 8", "d_in = 9"))
        assert main(["eval", str(checkpoint), "--config", str(other)]) == 2
        assert "features" in capsys.readouterr().err


class TestAblate:
    def test_lambda_grid(self, config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["ablate", "--config", str(config), "--out", str(out), "--axis", "lambda_jd",
                     "--values", "0,0.1,0.2,0.3"]) == 0
        rows = read_csv(out / "ablate_lambda_jd.csv")
        assert sum(r["row"] == "run" for r in rows) == 12
        agg = [r for r in rows if r["row"] == "aggregate"]
        assert [float(r["value"]) for r in agg] == [0.0, 0.1, 0.2, 0.3]
        assert all(r["status"] == "n=3" for r in agg)
        runs = [float(r["accuracy"]) for r in rows if r["row"] == "run" and r["value"] == "0.1"]
        assert float(agg[1]["accuracy"]) == pytest.approx(np.mean(runs))

    def test_knn_k(self, config, tmp_path):
        out = tmp_path / "out"
        assert main(["ablate", "--config", str(config), "--out", str(out), "--axis", "knn_k",
                     "--values", "10,50", "--seed", "1"]) == 0
        rows = read_csv(out / "ablate_knn_k.csv")
        assert [r["value"] for r in rows if r["row"] == "aggregate"] == ["10", "50"]

    def test_head_axis(self, config, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["ablate", "--config", str(config), "--out", str(out), "--axis", "head",
                     "--values", "softmax,softmax+jd", "--seed", "1"]) == 0
        rows = read_csv(out / "ablate_head.csv")
        assert [r["value"] for r in rows if r["row"] == "aggregate"] == ["softmax", "softmax+jd"]
        assert "softmax+jd" in capsys.readouterr().out

    def test_bad_values_rejected_first(self, config, tmp_path):
        out = tmp_path / "out"
        assert main(["ablate", "--config", str(config), "--out", str(out), "--axis", "head",
                     "--values", "softmax,sem"]) == 2
        assert main(["ablate", "--config", str(config), "--out", str(out), "--axis", "knn_k",
                     "--values", "0"]) == 2
        assert not out.exists()


class TestHelpers:
    def test_parse_head_spec(self):
        base = RunConfig.from_dict({"loss": {"lambda_jd": 0.2}})
        assert parse_head_spec("softmax", base).loss.lambda_jd == 0.0
        assert parse_head_spec("softmax+jd", base).loss.lambda_jd == 0.2
        assert parse_head_spec("softmax+jd", base.replace(loss__lambda_jd=0.0)).loss.lambda_jd == 0.1
        cfg = parse_head_spec("arcface-pe+jd", base)
        assert (cfg.head.kind, cfg.head.key) == ("arcface", "pe")
        for bad in ("softmax+xx", "softmax-dct"):
            with pytest.raises(ConfigError):
                parse_head_spec(bad, base)

    def test_aggregate(self):
        assert aggregate([0.5, None, 0.7]) == {"n": 2, "mean": pytest.approx(0.6), "std": pytest.approx(0.1)}
        assert aggregate([None])["n"] == 0

    def test_parser_requires_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])
