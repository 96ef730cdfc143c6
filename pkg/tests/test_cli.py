import json

import numpy as np
import pytest

from crem import cli
from crem.covariance import random_profile, save_profile, thresholds
from crem.field import FieldOracle
from crem.records import read_records, strip_timing
from crem.search import exhaustive_max


def run(argv, tmp_path, sub="out"):
    out = tmp_path / sub
    code = cli.main(list(argv) + ["--out", str(out), "--jobs", "1"])
    return code, out


def test_parse_seeds():
    assert cli.parse_seeds("3:4") == [3, 4, 5, 6]
    assert cli.parse_seeds("1,5,9") == [1, 5, 9]
    with pytest.raises(cli.ConfigError):
        cli.parse_seeds("")
    with pytest.raises(cli.ConfigError):
        cli.parse_seeds("4:0")


def test_profile_list_keeps_parentheses():
    assert cli._split_profiles("brw,two_slope(0.5),square") == ["brw", "two_slope(0.5)", "square"]


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# sweep\nprofile = square, brw\nN = 8,16\nM = 4\nseeds = 0:3  # three seeds\nformat = csv\n")
    c = cli.build_config(["run", "--config", str(cfg), "--N", "12"])
    assert c.profile == ["square", "brw"]
    assert c.N == [12] and c.M == [4] and c.seeds == [0, 1, 2] and c.format == "csv"


@pytest.mark.parametrize("text", ["N 8\n", "bogus = 3\n"])
def test_config_file_errors(tmp_path, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    code, _ = run(["run", "--config", str(cfg)], tmp_path)
    assert code == 1


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["run", "--profile", "no_such_profile", "--M", "4"],
    ["run", "--N", "0", "--M", "4"],
    ["run", "--N", "ten", "--M", "4"],
    ["run", "--format", "xml", "--M", "4"],
    ["run", "--N", "8"],  # greedy without M
])
def test_validation_exit_1(tmp_path, argv):
    assert run(argv, tmp_path)[0] == 1


def test_bad_profile_file_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 0\n0.5 0.4\nhalf 0.7\n1 1\n")
    code, _ = run(["analyze", "--profile", str(bad)], tmp_path)
    assert code == 1
    assert "3" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["run", "--N", "30", "--M", "23"],
    ["hardness", "--profile", "brw", "--steep", "1", "--x", "1.0", "--N", "20"],
    ["hardness", "--K", "1", "--epsilon", "1", "--N", "30", "--samples", "5"],
])
def test_guard_exit_2(tmp_path, argv):
    assert run(argv, tmp_path)[0] == 2


def test_version_pin(tmp_path, monkeypatch):
    monkeypatch.setenv("CREM_FIELD_VERSION", "spine-bridge-0")
    assert run(["run", "--N", "8", "--M", "4"], tmp_path)[0] == 1
    monkeypatch.setenv("CREM_FIELD_VERSION", FieldOracle.version)
    assert run(["run", "--N", "8", "--M", "4"], tmp_path)[0] == 0


@pytest.mark.parametrize("spec,regime,x_star,x_c", [
    ("brw", "equal", 1.177410, 1.177410),
    ("square", "x*<x_c", 1.1101, 1.1774),
    ("concave_square", "x*>x_c", 1.1101, 0.8326),
])
def test_analyze_regimes(tmp_path, capsys, spec, regime, x_star, x_c):
    code, out = run(["analyze", "--profile", spec], tmp_path)
    assert code == 0
    (rep,) = read_records(out / "analyze.jsonl")
    assert rep["regime"] == regime
    assert rep["x_star"] == pytest.approx(x_star, abs=1e-4)
    assert rep["x_c"] == pytest.approx(x_c, abs=1e-4)
    assert regime in capsys.readouterr().out
    for suffix in ("hull", "profile", "z", "zstar"):
        cols = np.loadtxt(out / f"{spec}_{suffix}.dat")
        assert cols.shape[1] == 2 and np.all(np.diff(cols[:, 0]) > 0)


def test_analyze_fuzz_invariants(tmp_path):
    rng = np.random.default_rng(2024)
    files = []
    for i in range(100):
        p = random_profile(int(rng.integers(1, 7)), rng)
        path = tmp_path / f"rand{i:03d}.txt"
        save_profile(p, path)
        files.append(str(path))
    code, out = run(["analyze", "--profile", ",".join(files)], tmp_path)
    assert code == 0
    reps = read_records(out / "analyze.jsonl")
    assert len(reps) == 100
    for r in reps:
        assert r["x_star"] <= r["x_s"] + 1e-12
        assert r["x_c"] <= r["x_s"] + 1e-12
        assert r["x_G"] <= r["x_star"] + 1e-12
        assert 0.0 <= r["t_G"] <= 1.0


def test_run_small_equals_exhaustive(tmp_path, brw):
    code, out = run(["run", "--profile", "brw", "--N", "8", "--M", "8", "--seeds", "0:6"], tmp_path)
    assert code == 0
    recs = read_records(out / "run.jsonl")
    assert len(recs) == 6
    for r in recs:
        best = exhaustive_max(FieldOracle(brw, 8, r["seed"]))
        assert r["best_value"] == best.value and r["node"] == best.node.path
        assert r["profile_hash"] and r["field_version"] == FieldOracle.version
    summary = (out / "run_summary.csv").read_text().splitlines()
    assert "mean_value_over_N" in summary[0] and len(summary) == 2


def test_run_csv_format(tmp_path):
    code, out = run(["run", "--N", "10", "--M", "5", "--ell", "2", "--seeds", "0:2", "--format", "csv"], tmp_path)
    assert code == 0
    lines = (out / "run.csv").read_text().splitlines()
    assert len(lines) == 3 and "leaf_only_greedy" in lines[1]


def test_records_deterministic(tmp_path):
    argv = ["hardness", "--profile", "square", "--N", "16", "--x", "0.6,1.3", "--budget", "3000",
            "--seeds", "0:3", "--M", "4", "--K", "2", "--epsilon", "1", "--samples", "50"]
    code_a, a = run(argv, tmp_path, "a")
    code_b, b = run(argv, tmp_path, "b")
    assert code_a == code_b == 0
    assert strip_timing(a / "hardness.jsonl") == strip_timing(b / "hardness.jsonl")
    raw = (a / "hardness.jsonl").read_text()
    assert "elapsed_ms" in raw
    kinds = {json.loads(line)["kind"] for line in raw.splitlines()}
    assert kinds == {"steep_mc", "hitting_time"}


def test_hardness_hitting_allowed_below_x_star(tmp_path, capsys):
    code, out = run(["hardness", "--profile", "brw", "--N", "16", "--x", "0.5", "--budget", "500",
                     "--seeds", "0:2", "--M", "4", "--algorithm", "block_greedy"], tmp_path)
    assert code == 0
    recs = read_records(out / "hardness.jsonl")
    assert len(recs) == 2 and all(r["hit"] for r in recs)
    assert "fraction 1.00" in capsys.readouterr().out


def test_hardness_needs_something(tmp_path):
    assert run(["hardness", "--N", "16"], tmp_path)[0] == 1


def test_sweep_counts_cells(tmp_path):
    code, out = run(["sweep", "--profile", "brw,square", "--N", "10,14", "--M", "5", "--seeds", "0:2"], tmp_path)
    assert code == 0
    recs = read_records(out / "sweep.jsonl")
    assert sorted({r["cell"] for r in recs}) == [0, 1, 2, 3]
    assert all(sum(r["cell"] == c for r in recs) == 2 for c in range(4))
    groups = {(r["profile_id"], r["N"]) for r in recs}
    assert groups == {("brw", 10), ("brw", 14), ("square", 10), ("square", 14)}
    assert len((out / "sweep_summary.csv").read_text().splitlines()) == 5


def test_sweep_cell_seeds_deterministic():
    assert cli.cell_seed(0, 3) == cli.cell_seed(0, 3)
    assert len({cli.cell_seed(0, i) for i in range(100)}) == 100


def test_sweep_empty_grid(tmp_path, capsys):
    assert run(["sweep", "--N", "", "--M", "4"], tmp_path)[0] == 1
    assert "nothing to run" in capsys.readouterr().err


def test_sweep_cell_errors_continue(tmp_path, capsys):
    code, out = run(["sweep", "--N", "8", "--M", "4,23", "--seeds", "0:1"], tmp_path)
    assert code == 0
    lines = [json.loads(s) for s in (out / "sweep.jsonl").read_text().splitlines()]
    assert any("error" in r and r["cell"] == 1 for r in lines)
    assert any(r.get("cell") == 0 and "best_value" in r for r in lines)


def test_paths_outputs(tmp_path):
    code, out = run(["paths", "--profile", "square", "--N", "64", "--M", "4", "--seeds", "1"], tmp_path)
    assert code == 0
    traj = np.loadtxt(out / "square_N64_M4_seed1_trajectory.dat")
    assert traj.shape == (65, 3)
    assert traj[0, 1] == 0.0
    (row,) = read_records(out / "paths.jsonl")
    assert row["value_over_N"] == pytest.approx(traj[-1, 1])


def test_jobs_do_not_change_records(tmp_path):
    argv = ["run", "--N", "12", "--M", "4", "--seeds", "0:4"]
    assert cli.main(argv + ["--out", str(tmp_path / "j1"), "--jobs", "1"]) == 0
    assert cli.main(argv + ["--out", str(tmp_path / "j2"), "--jobs", "2"]) == 0
    assert strip_timing(tmp_path / "j1" / "run.jsonl") == strip_timing(tmp_path / "j2" / "run.jsonl")


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "crem", "bogus"], capture_output=True, text=True)
    assert res.returncode == 1
