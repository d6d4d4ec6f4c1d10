import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from scatter_sgd.cli import main
from scatter_sgd.io import read_coeffs, read_curve, read_dataset, write_dataset
from scatter_sgd.rkhs import Dataset


def gen(tmp_path, name="data.csv", *extra):
    out = tmp_path / name
    assert main(["gen-data", "--out", str(out), *extra]) == 0
    return out


class TestGenData:
    def test_single_zero_row(self, tmp_path):
        out = gen(tmp_path, "d.csv", "--n", "1", "--d", "1", "--m", "1", "--fn", "zero", "--noise", "0")
        rows = list(csv.reader(open(out)))
        assert rows[0] == ["x1", "y1"]
        assert len(rows) == 2 and float(rows[1][1]) == 0.0

    def test_byte_identical(self, tmp_path):
        a = gen(tmp_path, "a.csv", "--seed", "4")
        b = gen(tmp_path, "b.csv", "--seed", "4")
        assert a.read_bytes() == b.read_bytes()

    def test_shape(self, tmp_path):
        out = gen(tmp_path, "d.csv", "--n", "50", "--d", "2", "--m", "2")
        rows = list(csv.reader(open(out)))
        assert rows[0] == ["x1", "x2", "y1", "y2"]
        assert len(rows) == 51 and all(len(r) == 4 for r in rows[1:])

    def test_round_trip_exact(self, tmp_path):
        g = np.random.default_rng(0)
        ds = Dataset(g.random((7, 3)), g.standard_normal((7, 2)))
        write_dataset(ds, tmp_path / "x.csv")
        back = read_dataset(tmp_path / "x.csv")
        np.testing.assert_array_equal(back.points, ds.points)
        np.testing.assert_array_equal(back.targets, ds.targets)

    def test_bad_values(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "x.csv"), "--noise", "-1"]) == 2
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "--out", str(tmp_path / "x.csv"), "--n", "0"])
        assert exc.value.code == 2

    def test_unwritable(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "missing" / "x.csv")]) == 2


class TestSolveExact:
    def test_zero_targets(self, tmp_path):
        data = gen(tmp_path, "z.csv", "--fn", "zero", "--noise", "0", "--n", "6")
        assert main(["solve-exact", "--data", str(data), "--out", str(tmp_path / "s")]) == 0
        assert np.all(read_coeffs(tmp_path / "s_coeffs.csv") == 0)
        assert json.load(open(tmp_path / "s_solution.json"))["norm_h"] == 0

    def test_single_point_closed_form(self, tmp_path):
        data = tmp_path / "one.csv"
        data.write_text("x1,y1\n0.25,2\n")
        assert main(["solve-exact", "--data", str(data), "--q", "0.2", "--out", str(tmp_path / "s")]) == 0
        c = read_coeffs(tmp_path / "s_coeffs.csv")[0, 0]
        assert c == pytest.approx(2.0 / (0.2 / 0.8 + 1), rel=1e-15)

    def test_ball_active(self, tmp_path):
        data = gen(tmp_path)
        assert main(["solve-exact", "--data", str(data), "--out", str(tmp_path / "free")]) == 0
        free = json.load(open(tmp_path / "free_solution.json"))
        r = 0.5 * free["norm_h"]
        assert main(["solve-exact", "--data", str(data), "--r", repr(r), "--out", str(tmp_path / "b")]) == 0
        sol = json.load(open(tmp_path / "b_solution.json"))
        assert sol["multiplier"] > 0
        assert abs(sol["norm_h"] - r) <= 1e-10 * r
        assert free["multiplier"] == 0 and free["residual"] <= 1e-10

    def test_missing_data(self, tmp_path):
        assert main(["solve-exact", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "s")]) == 2

    def test_duplicate_rows(self, tmp_path):
        data = tmp_path / "dup.csv"
        data.write_text("x1,y1\n0.5,1\n0.5,2\n")
        assert main(["solve-exact", "--data", str(data), "--out", str(tmp_path / "s")]) == 2


class TestSgdRun:
    def test_writes_trajectory(self, tmp_path):
        data = gen(tmp_path, "d.csv", "--n", "10")
        out = tmp_path / "run.csv"
        assert main(["sgd-run", "--data", str(data), "--kmax", "256", "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert rows[0]["k"] == "1" and rows[0]["n_atoms"] == "0"
        assert rows[-1]["k"] == "256"
        again = tmp_path / "again.csv"
        main(["sgd-run", "--data", str(data), "--kmax", "256", "--out", str(again)])
        assert out.read_bytes() == again.read_bytes()


class TestExperiment:
    ARGS = ["--n", "12", "--trials", "6", "--kmax", "4096", "--workers", "1"]

    def test_outputs_and_schema(self, tmp_path):
        prefix = tmp_path / "exp"
        code = main(["experiment", *self.ARGS, "--out-prefix", str(prefix)])
        summary = json.load(open(f"{prefix}_summary.json"))
        for key in ("config", "constants", "curve_file", "slope", "plateau", "grad_norm_sq_at_fstar", "gates"):
            assert key in summary
        assert set(summary["constants"]) >= {"lambda", "lambda_sq", "M", "rho", "b", "s"}
        assert set(summary["gates"]) == {"slope_pass", "plateau_pass"}
        assert code == (0 if all(summary["gates"].values()) else 1)
        curve = read_curve(summary["curve_file"])
        assert list(curve.k) == [2**e for e in range(4, 13)]
        manifest = json.load(open(f"{prefix}_manifest.json"))
        assert manifest["seed"] == 0 and "numpy" in manifest["versions"]
        assert manifest["duration_s"] >= 0

    def test_deterministic_outputs(self, tmp_path):
        main(["experiment", *self.ARGS, "--out-prefix", str(tmp_path / "a")])
        main(["experiment", *self.ARGS, "--out-prefix", str(tmp_path / "b")])
        assert (tmp_path / "a_curve.csv").read_bytes() == (tmp_path / "b_curve.csv").read_bytes()

    def test_gate_failure_exit_1(self, tmp_path, capsys):
        # a tiny regularization weight makes the steps too small to reach the asymptotic rate
        code = main(["experiment", "--n", "12", "--trials", "4", "--kmax", "1024", "--workers", "1",
                     "--q", "0.02", "--out-prefix", str(tmp_path / "g")])
        assert code == 1
        assert "gate failed: slope" in capsys.readouterr().err
        summary = json.load(open(tmp_path / "g_summary.json"))
        assert summary["gates"]["slope_pass"] is False

    def test_horizon_too_short(self, tmp_path, capsys):
        code = main(["experiment", "--trials", "2", "--kmax", "128", "--workers", "1",
                     "--out-prefix", str(tmp_path / "x")])
        assert code == 2
        assert "cannot fit rate" in capsys.readouterr().err

    def test_trials_one_config_error(self, tmp_path, capsys):
        assert main(["experiment", "--trials", "1", "--out-prefix", str(tmp_path / "x")]) == 2
        assert "trials" in capsys.readouterr().err

    def test_bad_scaling_weights(self, tmp_path, capsys):
        code = main(["experiment", "--scaling", "0.5:0.4,1.5:0.4", "--out-prefix", str(tmp_path / "x")])
        assert code == 2
        assert "sum to 1" in capsys.readouterr().err

    def test_bad_s(self, tmp_path):
        assert main(["experiment", "--s", "1", "--out-prefix", str(tmp_path / "x")]) == 2

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["experiment"])
        assert exc.value.code == 2


class TestVerify:
    def test_passes(self, capsys):
        assert main(["verify", "--seed", "1"]) == 0
        out = capsys.readouterr().out
        assert "all suites passed" in out
        assert out.count("[PASS]") >= 15

    def test_corrupted_gram_fails(self, capsys):
        assert main(["verify", "--seed", "1", "--corrupt-gram"]) == 1
        out = capsys.readouterr().out
        assert "[FAIL] reproducing_property" in out

    def test_heavy_multiplies_instances(self):
        from scatter_sgd.verify import kernel_symmetry, run_suites

        light = run_suites(seed=0, suites=(kernel_symmetry,))[0]
        heavy = run_suites(seed=0, heavy=True, suites=(kernel_symmetry,))[0]
        assert heavy.instances >= 10 * light.instances


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "scatter_sgd.cli", "gen-data", "--n", "3",
                           "--out", str(tmp_path / "x.csv")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "scatter_sgd.cli", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
