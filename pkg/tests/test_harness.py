import csv
import io
import json
import math

import numpy as np
import pytest

from krylov import harness
from krylov.cli import main
from krylov.sparse import read_matrix_market


def parse_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestSweep:
    def test_kappa_grid(self):
        assert harness.kappa_grid(1e1, 1e4) == [10.0, 100.0, 1000.0, 10000.0]
        assert len(harness.kappa_grid()) == 15
        with pytest.raises(ValueError):
            harness.kappa_grid(1e5, 1e2)

    def test_descending_grid_rejected(self):
        with pytest.raises(ValueError):
            harness.ortho_sweep(kappas=[1e3, 1e1], n=100, seeds=[0])

    @pytest.mark.parametrize("scheme", ["cholqr2", "bcgs-pip2"])
    def test_kappa_one(self, scheme):
        rows = harness.ortho_sweep(scheme, n=5000, kappas=[1.0], seeds=range(3))
        assert all(r["final_error"] < 1e-14 and not r["breakdown"] for r in rows)

    def test_cholqr2_kappa_1e5(self):
        rows = harness.ortho_sweep("cholqr2", n=100_000, k=5, kappas=[1e5], seeds=range(10))
        for r in rows:
            assert 1e-8 <= r["first_error"] <= 1e-4
            assert r["final_error"] < 1e-13

    def test_cholqr2_kappa_1e12_first_pass(self):
        rows = harness.ortho_sweep("cholqr2", n=100_000, kappas=[1e12], seeds=range(10))
        assert all(r["breakdown"] or r["first_error"] > 1e-6 for r in rows)

    @pytest.mark.xfail(strict=True, reason="a seed that survives the first Cholesky at 1e12 is "
                       "fully repaired by the second pass (final error ~3e-10)")
    def test_cholqr2_kappa_1e12_final(self):
        rows = harness.ortho_sweep("cholqr2", n=100_000, kappas=[1e12], seeds=range(10))
        assert all(r["breakdown"] or r["final_error"] > 1e-6 for r in rows)

    def test_rows_self_describing(self):
        rows = harness.ortho_sweep("bcgs-pip2", n=500, kappas=[1e2, 1e9], seeds=[4, 5], panels=3)
        assert len(rows) == 4
        for r in rows:
            for key in ("schema", "experiment", "scheme", "n", "k", "panels", "s", "kappa", "seed"):
                assert key in r
        bd = [r for r in rows if r["breakdown"]]
        assert all(math.isnan(r["final_error"]) for r in bd)

    def test_summary(self):
        rows = harness.ortho_sweep("cholqr2", n=2000, kappas=[1e2, 1e3], seeds=range(4))
        summary = harness.summarize_sweep(rows)
        assert [s["kappa"] for s in summary] == [1e2, 1e3]
        first = [r["first_error"] for r in rows if r["kappa"] == 1e3]
        s = summary[1]
        assert s["first_error_min"] == min(first) and s["first_error_max"] == max(first)
        assert s["first_error_avg"] == pytest.approx(np.mean(first), rel=1e-15)
        assert s["seeds"] == 4 and s["breakdowns"] == 0

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            harness.ortho_sweep("mgs", n=100, kappas=[1.0], seeds=[0])


class TestGluedTrace:
    def test_small_setup(self):
        rows = harness.glued_trace(n=8000, m=60, s=5, shat=20, kappa_panel=1e7, growth=2.0)
        assert len(rows) == 12
        for r in rows:
            assert r["preprocessed_kappa"] < 10
            ratio = r["raw_prefix_kappa"] / r["target_kappa"]
            assert 1 / 30 <= ratio <= 30
        ends = [r for r in rows if r["big_panel_end"]]
        assert [r["block"] for r in ends] == [4, 8, 12]
        assert all(r["ortho_error"] < 1e-13 for r in ends)
        assert rows[-1]["reduces"] == 12 + 3

    def test_deterministic(self):
        a = harness.glued_trace(n=2000, m=20, s=5, shat=10)
        b = harness.glued_trace(n=2000, m=20, s=5, shat=10)
        assert a == b or all(
            all((x == y) or (isinstance(x, float) and math.isnan(x) and math.isnan(y))
                for x, y in zip(ra.values(), rb.values())) for ra, rb in zip(a, b))


class TestMpkTrace:
    def test_laplace60(self):
        A, src = harness.matrix_from_source(grid=60)
        rows = harness.mpk_trace(A, m=60, s=5, shat=60, source=src)
        assert len(rows) == 12 and not any(r["breakdown"] for r in rows)
        assert rows[-1]["big_panel_end"] and rows[-1]["ortho_error"] < 1e-12
        assert max(r["preprocessed_kappa"] for r in rows) < 1e3

    def test_identity_breakdown_is_data(self):
        A, src = harness.matrix_from_source(identity=50)
        rows = harness.mpk_trace(A, source=src)
        assert len(rows) == 1 and rows[0]["breakdown"] and rows[0]["mpk_kappa"] > 1e15

    def test_seeded_start(self):
        A, _ = harness.matrix_from_source(grid=10)
        a = harness.mpk_trace(A, m=20, s=5, shat=10, seed=3)
        assert a[0]["seed"] == 3 and a[-1]["ortho_error"] < 1e-12

    def test_source_exclusive(self):
        with pytest.raises(ValueError):
            harness.matrix_from_source(grid=10, identity=5)


class TestSolve:
    @pytest.mark.xfail(strict=True, reason="at desk scale the later convergence check of a "
                       "larger panel costs whole extra panels: totals 108, 70, 65, 65 on 100^2")
    def test_sync_total_decreases_with_shat(self):
        A, _ = harness.matrix_from_source(grid=100)
        totals = [harness.solve(A, "two-stage", shat=shat).reduces for shat in (5, 20, 40, 60)]
        assert all(a > b for a, b in zip(totals, totals[1:]))

    def test_sync_fixed_budget_decreases_with_shat(self):
        A, _ = harness.matrix_from_source(grid=100)
        reps = [harness.solve(A, "two-stage", shat=shat, tol=1e-14, max_iters=300)
                for shat in (5, 20, 40, 60)]
        assert all(r.iterations == 300 for r in reps)
        assert [r.reduces for r in reps] == [120, 75, 70, 65]

    def test_per_block_counts(self):
        A, _ = harness.matrix_from_source(grid=50)
        expected = {"bcgs2-cholqr2": 5, "bcgs-pip2": 2, "two-stage": 1}
        for scheme, per in expected.items():
            rep = harness.solve(A, scheme, tol=1e-12)
            assert rep.sync["per_block"][1:12] == [per] * 11
        assert rep.sync["per_big_panel"] == [1] * rep.cycles

    def test_record_and_history(self):
        A, src = harness.matrix_from_source(grid=20)
        rep = harness.solve(A, "gmres", tol=1e-8)
        rec = harness.solve_record(rep, src, 1e-8)
        assert rec["scheme"] == "gmres-cgs2" and rec["error_inf"] < 1e-6
        rows = harness.history_rows(rep, src, 1e-8)
        assert rows[0]["rel_residual"] == 1.0 and len(rows) == rep.cycles + 1


class TestOutput:
    def test_number_format(self):
        assert harness.format_value(0.1) == "1.0000000000000001e-01"
        assert float(harness.format_value(1 / 3)) == 1 / 3
        assert harness.format_value(True) == "1" and harness.format_value(7) == "7"
        assert harness.format_value(float("nan")) == "nan"

    def test_csv_header_and_rows(self):
        buf = io.StringIO()
        harness.write_csv([{"a": 1, "b": 0.5}, {"a": 2, "b": 0.25, "c": "x"}], buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "a,b,c"
        assert lines[2] == "2,2.5000000000000000e-01,x"


class TestCli:
    def run(self, capsys, *argv):
        code = main(list(argv))
        return code, capsys.readouterr()

    def test_gen_logscaled_sidecar(self, tmp_path, capsys):
        out = tmp_path / "ls"
        code, _ = self.run(capsys, "gen", "--kind", "logscaled", "--n", "300", "--k", "4",
                           "--kappa", "1e3", "--seed", "2", "--out", str(out))
        assert code == 0
        side = json.loads((tmp_path / "ls.json").read_text())
        V = np.load(tmp_path / "ls.npy")
        assert V.shape == (300, 4) and np.isfortran(V)
        assert np.allclose(side["planted_spectrum"], [1, 0.1, 0.01, 0.001])
        sv = np.linalg.svd(V, compute_uv=False)
        assert np.allclose(sv, side["planted_spectrum"], rtol=1e-10)

    def test_gen_glued_bit_identical(self, tmp_path, capsys):
        for name in ("a", "b"):
            self.run(capsys, "gen", "--kind", "glued", "--n", "400", "--panels", "3",
                     "--seed", "9", "--out", str(tmp_path / name))
        assert (tmp_path / "a.npy").read_bytes() == (tmp_path / "b.npy").read_bytes()

    def test_gen_identity(self, tmp_path, capsys):
        code, _ = self.run(capsys, "gen", "--kind", "identity", "--n", "6",
                           "--out", str(tmp_path / "i"))
        assert code == 0
        A = read_matrix_market(str(tmp_path / "i.mtx"))
        assert np.array_equal(A.to_dense(), np.eye(6))

    def test_ortho_sweep_rerun_identical(self, tmp_path, capsys):
        args = ["ortho-sweep", "--n", "1000", "--seeds", "2", "--kappa-max", "1e3"]
        self.run(capsys, *args, "--out", str(tmp_path / "a.csv"), "--summary",
                 str(tmp_path / "s.csv"))
        self.run(capsys, *args, "--out", str(tmp_path / "b.csv"))
        a = (tmp_path / "a.csv").read_text()
        assert a == (tmp_path / "b.csv").read_text()
        rows = parse_csv(a)
        assert len(rows) == 6 and rows[0]["seed"] == "0"
        assert len(parse_csv((tmp_path / "s.csv").read_text())) == 3

    def test_mpk_trace_breakdown_exit_zero(self, capsys):
        code, out = self.run(capsys, "mpk-trace", "--identity", "20")
        assert code == 0
        assert parse_csv(out.out)[0]["breakdown"] == "1"

    def test_solve_json(self, tmp_path, capsys):
        code, out = self.run(capsys, "solve", "--grid", "20", "--scheme", "two-stage",
                             "--shat", "20", "--history", str(tmp_path / "h.csv"))
        assert code == 0
        rep = json.loads(out.out)
        assert rep["converged"] and rep["iterations"] % 20 == 0 and rep["shat"] == 20
        assert len(parse_csv((tmp_path / "h.csv").read_text())) == rep["cycles"] + 1

    def test_solve_matrix_file(self, tmp_path, capsys):
        self.run(capsys, "gen", "--kind", "laplace2d", "--grid", "12", "--out",
                 str(tmp_path / "lap"))
        code, out = self.run(capsys, "solve", "--matrix", str(tmp_path / "lap.mtx"))
        assert code == 0 and json.loads(out.out)["status"] == "converged"

    def test_glued_trace_cli(self, capsys):
        code, out = self.run(capsys, "glued-trace", "--n", "1000", "--m", "20", "--shat", "10")
        assert code == 0 and len(parse_csv(out.out)) == 4

    def test_missing_file(self, capsys):
        code, out = self.run(capsys, "solve", "--matrix", "/nonexistent/a.mtx")
        assert code == 1 and "krylov:" in out.err

    def test_bad_parameters(self, capsys):
        code, _ = self.run(capsys, "solve", "--grid", "10", "--s", "7")
        assert code == 2

    def test_bad_arguments(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["solve"])
        assert err.value.code == 2

    def test_thread_env(self, monkeypatch, capsys):
        monkeypatch.setenv("KRYLOV_NUM_THREADS", "1")
        code, _ = self.run(capsys, "solve", "--identity", "5")
        assert code == 0
        monkeypatch.setenv("KRYLOV_NUM_THREADS", "lots")
        with pytest.raises(SystemExit) as err:
            main(["solve", "--identity", "5"])
        assert err.value.code == 2
