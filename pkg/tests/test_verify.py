import numpy as np
import pytest

from twassl.verify import SUITES, SweepReport, run_suite, sweep_topologies, unit_path_topologies


class TestSweepReport:
    def test_pass_fail(self):
        rep = SweepReport("x", ["abs_err"], 1e-3, [{"abs_err": 1e-4}, {"abs_err": 1e-3}])
        assert rep.passed and rep.max_error == 1e-3
        rep.rows.append({"abs_err": 2e-3})
        assert not rep.passed and rep.n_violations == 1
        assert rep.summary().startswith("FAIL x: 3 cases")

    def test_empty_fails(self):
        assert not SweepReport("x", ["abs_err"], 1.0).passed

    def test_extra_limits(self):
        rep = SweepReport("x", ["e", "m"], 1.0, [{"e": 0.0, "m": 1.0}], error_column="e",
                          extra_limits={"m": 0.5})
        assert not rep.passed

    def test_inf_error_fails(self):
        assert not SweepReport("x", ["abs_err"], 1.0, [{"abs_err": float("inf")}]).passed

    def test_csv(self):
        rep = SweepReport("x", ["a", "abs_err"], 1.0, [{"a": "tv", "abs_err": 0.1}])
        assert rep.to_csv() == "a,abs_err\ntv,0.1\n"


class TestTopologyFamilies:
    def test_sweep_families(self):
        fams = list(sweep_topologies())
        assert len(fams) == 12
        assert {(name, n) for name, n, _ in fams} == {(f, n) for f in ("tv", "cluster", "chain")
                                                      for n in (2, 4, 8, 16)}
        assert all(T.n_leaves == n for _, n, T in fams)

    def test_unit_paths(self):
        assert all(T.has_unit_paths() for _, _, T in unit_path_topologies())


class TestSuites:
    @pytest.mark.parametrize("name", sorted(SUITES))
    def test_small_run_passes(self, name):
        rep = run_suite(name, trials=3, seed=1)
        assert rep.passed, rep.summary()
        assert rep.elapsed > 0

    def test_seeded(self):
        a, b = run_suite("jd-bound", 5, seed=2), run_suite("jd-bound", 5, seed=2)
        assert [r["jd"] for r in a.rows] == [r["jd"] for r in b.rows]

    def test_gradcheck_covers_heads(self):
        rep = run_suite("gradcheck", trials=3)
        assert {r["head"] for r in rep.rows} == {"Softmax", "SEM(L=2,V=2)", "AF (DCT)"}
        assert all(r["target_adjoint_max"] == 0.0 for r in rep.rows)

    def test_unknown(self):
        with pytest.raises(KeyError):
            run_suite("nope")

    def test_dct_range(self):
        rep = run_suite("dct-orth")
        assert [r["d"] for r in rep.rows] == list(range(2, 65))
        assert rep.max_error <= 1e-10
