import csv
import json
import math
import subprocess
import sys

import pytest

from barrier_blo.cli import gradcheck_problem, main
from barrier_blo.experiments import TRACE_HEADER, read_trace
from barrier_blo.linesearch import check_safety_chain
from barrier_blo.problems import make_quadratic_testbed
from barrier_blo.problems.synthetic import QuadraticTestbed


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


SMALL_SYNTHETIC = "problem = synthetic\ndim = 5\nmax_iter = 150\nseeds = 0, 1\n"


def csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_solve_writes_traces_and_summary(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", write_cfg(tmp_path, SMALL_SYNTHETIC), "--out", str(out)]) == 0
    summary = json.loads((out / "solve" / "summary.json").read_text())
    assert [r["seed"] for r in summary["runs"]] == [0, 1]
    for run in summary["runs"]:
        assert {"status", "iterations", "final_f", "final_sqrt_h", "final_kkt_residual",
                "config", "seed"} <= set(run)
        assert run["config"]["eps"] == 0.1
        rows = csv_rows(out / "solve" / f"trace_seed{run['seed']}.csv")
        assert rows[0] == TRACE_HEADER
        cols = read_trace(out / "solve" / f"trace_seed{run['seed']}.csv")
        assert cols["k"] == list(range(len(rows) - 1))
        # repr serialization round-trips exactly
        assert all(repr(float(v)) == v for row in rows[1:] for v in row[1:4])
        h = [v + 0.01 for v in cols["h_minus_eps2"]]
        assert all(math.sqrt(max(x, 0.0)) <= 0.1 for x in h)
        assert check_safety_chain(h, 0.1, 0.1)


def test_solve_config_error_exit_code(tmp_path, capsys):
    assert main(["solve", "--config", write_cfg(tmp_path, "eps = -0.5\n")]) == 4
    assert "eps:" in capsys.readouterr().err


def test_solve_infeasible_start_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "start = random\nstart_scale = 10\ndim = 5\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "InfeasibleStart" in capsys.readouterr().err


def test_init_recovers_far_start(tmp_path):
    cfg = write_cfg(tmp_path, "start = random\nstart_scale = 10\ndim = 5\ninit = true\nmax_iter = 20\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0


def test_solve_line_search_failure_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, "dim = 5\nmax_iter = 50\nt_max = 1e6\nmax_backtracks = 2\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_env_var_overrides_out(tmp_path, monkeypatch):
    target = tmp_path / "env"
    monkeypatch.setenv("BARRIER_BLO_OUT", str(target))
    cfg = write_cfg(tmp_path, "dim = 4\nmax_iter = 5\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "flag")]) == 0
    assert (target / "solve" / "trace_seed0.csv").exists()
    assert not (tmp_path / "flag").exists()


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SYNTHETIC)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path), "--seed-override", "7"]) == 0
    assert sorted(p.name for p in (tmp_path / "solve").glob("trace_*.csv")) == ["trace_seed7.csv"]


def without_wall(path):
    return [row[:-1] for row in csv_rows(path)]


def test_parallel_jobs_match_sequential(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_SYNTHETIC)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "b"), "--jobs", "2"]) == 0
    for seed in (0, 1):
        name = f"solve/trace_seed{seed}.csv"
        assert without_wall(tmp_path / "a" / name) == without_wall(tmp_path / "b" / name)


def test_bad_jobs_flag(tmp_path):
    assert main(["solve", "--jobs", "0"]) == 4


def test_ablate_table(tmp_path):
    cfg = write_cfg(tmp_path, "dim = 5\nmax_iter = 100\nseeds = 0, 1, 2\ngrid = 0.001, 0.1\n")
    assert main(["ablate", "--config", cfg, "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "ablate" / "summary.json").read_text())
    assert [row["w"] for row in summary["table"]] == [0.001, 0.1]
    for row in summary["table"]:
        assert len(row["first_k_near_boundary"]) == 3
        assert set(row["median_first_k_hypergrad_below"]) == {"0.1", "0.01", "0.001"}
    assert len(list((tmp_path / "ablate").glob("trace_w*_seed*.csv"))) == 6


def test_ablate_singleton_grid_matches_solve(tmp_path):
    cfg = write_cfg(tmp_path, "dim = 5\nmax_iter = 60\ngrid = 0.01\n")
    assert main(["ablate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert without_wall(tmp_path / "ablate" / "trace_w0.01_seed0.csv") == \
        without_wall(tmp_path / "solve" / "trace_seed0.csv")


def test_ablate_empty_grid(tmp_path):
    assert main(["ablate", "--config", write_cfg(tmp_path, "grid =\n")]) == 4


def test_gradcheck_passes_on_bundled_problems(tmp_path, capsys):
    assert main(["gradcheck", "--config", write_cfg(tmp_path, "dim = 8\n")]) == 0
    dhc = "problem = dhc\nnum_train = 30\nnum_val = 20\nnum_test = 20\nfeature_dim = 5\nnum_classes = 3\n"
    assert main(["gradcheck", "--config", write_cfg(tmp_path, dhc, "dhc.cfg")]) == 0
    assert "grad_h" in capsys.readouterr().out


def test_gradcheck_detects_scaled_gradient():
    class Corrupted(QuadraticTestbed):
        def grad_f(self, z):
            return 1.1 * super().grad_f(z)

    base = make_quadratic_testbed(3, seed=0)
    assert gradcheck_problem(base) == 0
    assert gradcheck_problem(Corrupted(base.H, base.Q, base.z_star[:3])) == 1


def test_qcqp_selftest(capsys):
    assert main(["qcqp-selftest", "--count", "1000", "--seed", "5"]) == 0
    out = capsys.readouterr().out
    assert "100 on the boundary" in out and "[ok]" in out


def test_qcqp_selftest_empty(capsys):
    assert main(["qcqp-selftest", "--count", "0"]) == 0
    assert "warning" in capsys.readouterr().err


def compare_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_compare_on_testbed(tmp_path):
    cfg = write_cfg(tmp_path, "problem = quadratic\nn = 3\nproblem_seed = 1\nbaseline_outer_steps = 100\n")
    assert main(["compare", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = compare_rows(tmp_path / "compare" / "compare_seed0.csv")
    barrier = [float(r["barrier_hypergrad_norm"]) for r in rows if r["barrier_hypergrad_norm"]]
    baseline = [float(r["baseline_hypergrad_norm"]) for r in rows if r["baseline_hypergrad_norm"]]
    assert barrier[-1] <= 1e-4 and baseline[-1] <= 1e-4
    assert barrier[0] == pytest.approx(baseline[0], rel=1e-8)


def test_compare_baseline_only(tmp_path):
    cfg = write_cfg(tmp_path, "dim = 5\ncompare_mode = baseline-only\nbaseline_outer_steps = 4\n")
    assert main(["compare", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = compare_rows(tmp_path / "compare" / "compare_seed0.csv")
    assert len(rows) == 5
    assert all(r["barrier_hypergrad_norm"] == "" and r["barrier_sqrt_h"] == "" for r in rows)
    assert all(r["baseline_hypergrad_norm"] != "" for r in rows)


def test_compare_marks_baseline_violations(tmp_path):
    cfg = write_cfg(tmp_path, "dim = 20\nmax_iter = 300\nbaseline_outer_steps = 30\nseeds = 3\n")
    assert main(["compare", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = compare_rows(tmp_path / "compare" / "compare_seed3.csv")
    assert all(float(r["barrier_sqrt_h"]) <= 0.1 for r in rows if r["barrier_sqrt_h"])
    for r in rows:
        if r["baseline_sqrt_h"]:
            assert r["baseline_violation"] == str(int(float(r["baseline_sqrt_h"]) > 0.1))
    summary = json.loads((tmp_path / "compare" / "summary.json").read_text())["runs"][0]
    assert summary["barrier_safety_chain_ok"] is True
    assert summary["baseline_violation_rows"] == sum(r["baseline_violation"] == "1" for r in rows)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "barrier_blo", "qcqp-selftest", "--count", "20"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "max deviation" in proc.stdout
