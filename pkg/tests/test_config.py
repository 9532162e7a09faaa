from pathlib import Path

import numpy as np
import pytest

from twassl.config import ConfigError, RunConfig, build_tree, load_config


def write(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


class TestParsing:
    def test_defaults(self):
        cfg = RunConfig.from_dict({})
        assert cfg.head.d_out == cfg.encoder.d_out == 32
        assert cfg.seeds == (1, 2, 3)
        assert (cfg.loss.tau, cfg.loss.lambda_jd, cfg.head.eta, cfg.eval.k) == (0.07, 0.1, 0.1, 50)
        assert cfg.train.collapse_threshold == 1e-4 and cfg.train.collapse_patience == 5

    def test_full_file(self, tmp_path):
        path = write(tmp_path, """
seeds = [4, 5]
output_dir = "out"
[tree]
kind = "cluster"
n_clusters = 4
[head]
kind = "sem"
L = 4
V = 4
[encoder]
hidden = [64]
d_out = 16
[loss]
objective = "simsiam_twd"
lambda_jd = 0
[optimizer]
lr = 0.1
""")
        cfg = load_config(path)
        assert cfg.seeds == (4, 5) and cfg.head.d_prob == 16
        assert cfg.loss.lambda_jd == 0.0 and isinstance(cfg.loss.lambda_jd, float)
        assert cfg.optimizer.resolved(False).kind == "sgd"
        assert build_tree(cfg).n_leaves == 16

    def test_syntax_error_location(self, tmp_path):
        path = write(tmp_path, "[head]\nkind = \n")
        with pytest.raises(ConfigError, match="line 2"):
            load_config(path)

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_dict({"head": {"kindd": "softmax"}})
        assert info.value.field == "head.kindd"

    def test_unknown_section(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_dict({"model": {}})
        assert info.value.field == "model"

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="loss.tau"):
            RunConfig.from_dict({"loss": {"tau": "small"}})
        with pytest.raises(ConfigError, match="train.abort_on_collapse"):
            RunConfig.from_dict({"train": {"abort_on_collapse": 1}})
        with pytest.raises(ConfigError, match="seeds"):
            RunConfig.from_dict({"seeds": [1, "2"]})

    def test_d_out_lives_in_encoder(self):
        with pytest.raises(ConfigError, match="head.d_out"):
            RunConfig.from_dict({"head": {"d_out": 8}})

    def test_overrides(self, tmp_path):
        path = write(tmp_path, "[loss]\nlambda_jd = 0.3\n")
        assert load_config(path, loss__lambda_jd=0.2).loss.lambda_jd == 0.2


class TestValidation:
    def test_sem_product(self):
        with pytest.raises(ConfigError, match="head"):
            RunConfig.from_dict({"head": {"kind": "sem", "L": 3, "V": 3}})

    @pytest.mark.parametrize("doc", [
        {"head": {"kind": "none"}},
        {"tree": {"kind": "star"}},
        {"tree": {"kind": "cluster", "n_clusters": 5}},
        {"tree": {"kind": "file"}},
        {"optimizer": {"kind": "lbfgs"}},
        {"optimizer": {"lr": -1.0}},
        {"encoder": {"hidden": [0]}},
        {"encoder": {"activation": "tanh"}},
        {"data": {"kind": "parquet"}},
        {"data": {"kind": "csv"}},
        {"data": {"dropout": 2.0}},
        {"train": {"batch_size": 1}},
        {"train": {"epochs": -1}},
        {"eval": {"k": 0}},
        {"eval": {"metric": "euclid"}},
        {"seeds": []},
        {"loss": {"jd_mode": "tree"}},
        {"loss": {"tau": 0.0}},
    ])
    def test_rejected(self, doc):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(doc)

    def test_tree_jd_ok_with_unit_paths(self):
        cfg = RunConfig.from_dict({"tree": {"edge_weight": 1.0}, "loss": {"jd_mode": "tree"}})
        assert build_tree(cfg).has_unit_paths()


class TestRoundTrip:
    @pytest.mark.parametrize("doc", [{}, {"head": {"kind": "sem", "L": 4, "V": 8}},
                                     {"tree": {"kind": "chain", "weights": [0.5] * 31}},
                                     {"loss": {"objective": "simsiam_cosine"}, "head": {"kind": "none"}}])
    def test_snapshot(self, doc):
        cfg = RunConfig.from_dict(doc)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    def test_replace_revalidates(self):
        cfg = RunConfig.from_dict({})
        with pytest.raises(ConfigError):
            cfg.replace(head__kind="bogus")
        assert cfg.replace(encoder__d_out=8).head.d_out == 8


class TestBuildTree:
    def test_kinds(self, tmp_path):
        base = RunConfig.from_dict({"encoder": {"d_out": 4}})
        assert build_tree(base).n_nodes == 4
        chain = base.replace(tree__kind="chain", tree__weights=[1.0, 2.0, 3.0])
        assert {1.0, 2.0, 3.0} <= set(build_tree(chain).w.tolist())
        path = tmp_path / "tree.json"
        path.write_text(build_tree(base.replace(tree__kind="cluster")).to_json())
        from_file = base.replace(tree__kind="file", tree__path=str(path))
        assert build_tree(from_file).n_leaves == 4

    def test_file_leaf_mismatch(self, tmp_path):
        base = RunConfig.from_dict({"encoder": {"d_out": 4}})
        path = tmp_path / "tree.json"
        path.write_text(build_tree(base).to_json())
        with pytest.raises(ConfigError, match="leaves"):
            build_tree(base.replace(encoder__d_out=6, tree__kind="file", tree__path=str(path)))


class TestShippedConfigs:
    CONFIGS = sorted((Path(__file__).parents[1] / "configs").glob("*.toml"))

    def test_present(self):
        assert len(self.CONFIGS) >= 5

    @pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
    def test_parse(self, path):
        load_config(path)

    def test_default_file_matches_code(self):
        path = next(p for p in self.CONFIGS if p.stem == "default")
        assert load_config(path).replace(output_dir="runs") == RunConfig.from_dict({})
