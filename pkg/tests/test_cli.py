import csv
import json
import subprocess
import sys

import pytest

from pavtraffic.cli import COMMANDS, main

FAST = """\
# small settings so every command finishes quickly
k = 20
horizon_t = 5.0
sweep_points = 3
grid_step = 0.5
oracle_n = 2000
multistart = 3
erlang_ks = 1,4,16
"""


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def _run(tmp_path, *argv, config=FAST):
    tmp_path.mkdir(parents=True, exist_ok=True)
    cfg = tmp_path / "fast.cfg"
    cfg.write_text(config)
    out = tmp_path / "out"
    return main([*argv, "--config", str(cfg), "--out", str(out)]), out


def test_simulate_writes_phase_and_throughput_series(tmp_path):
    code, out = _run(tmp_path, "simulate", "--preset", "downward-baseline", config="")
    assert code == 0
    traj = _rows(out / "trajectory.csv")
    thr = _rows(out / "throughput.csv")
    assert traj[0] == ["time_s", "sum_xh", "sum_xa", "q_hdv", "xh0", "xa0"]
    assert thr[0] == ["time_s", "v_mps", "h_eff_s", "c_vphpl"]
    assert len(traj) == len(thr) == 3002
    summary = json.loads((out / "summary.json").read_text())
    assert summary["samples"] == 3001


def test_compare_reports(tmp_path):
    code, out = _run(tmp_path, "compare", "--preset", "downward-cascade")
    assert code == 0
    report = json.loads((out / "compare.json").read_text())
    assert report["steady_gap_vphpl"] < 0
    assert _rows(out / "compare.csv")[0] == ["time_s", "v_mps", "c_dependent_vphpl", "c_baseline_vphpl", "gap_vphpl"]


@pytest.mark.parametrize("axis,header", [
    ("gamma", ["gamma", "steady_vphpl", "l2_fluctuation"]),
    ("initial_fraction", ["frac_h0", "convergence_time_s", "overshoot_vphpl"]),
    ("rate_grid", ["lambda_a", "lambda_b", "steady_vphpl", "l2_fluctuation"]),
])
def test_sweep_axes(tmp_path, axis, header):
    code, out = _run(tmp_path, "sweep", "--axis", axis)
    assert code == 0
    rows = _rows(out / f"sweep_{axis}.csv")
    assert rows[0] == header
    assert len(rows) == (5 if axis == "rate_grid" else 4)


def test_sweep_gamma_one_row_is_flat(tmp_path):
    code, out = _run(tmp_path, "sweep", "--axis", "gamma")
    last = _rows(out / "sweep_gamma.csv")[-1]
    assert float(last[0]) == 1.0 and float(last[2]) == 0.0


def test_sweep_with_workers_matches_serial(tmp_path):
    _, serial = _run(tmp_path / "a", "sweep", "--axis", "gamma")
    _, pooled = _run(tmp_path / "b", "sweep", "--axis", "gamma", "--workers", "2")
    assert (serial / "sweep_gamma.csv").read_bytes() == (pooled / "sweep_gamma.csv").read_bytes()


def test_ngsim_needs_and_reads_profile(tmp_path):
    code, _ = _run(tmp_path, "ngsim")
    assert code == 1
    prof = tmp_path / "speed.csv"
    prof.write_text("time_s,speed_mps\n100,12\n103,5\n105,11\n")
    code, out = _run(tmp_path, "ngsim", "--profile", str(prof))
    assert code == 0
    rows = _rows(out / "ngsim.csv")
    assert float(rows[1][0]) == 100.0
    assert float(rows[-1][0]) == pytest.approx(105.0)


def test_ngsim_rejects_bad_rows(tmp_path, capsys):
    prof = tmp_path / "speed.csv"
    prof.write_text("time_s,speed_mps\n0,12\n1,-3\n")
    code, _ = _run(tmp_path, "ngsim", "--profile", str(prof))
    assert code == 1
    assert "speed.csv:3" in capsys.readouterr().err


def test_stability_scan_csv(tmp_path):
    code, out = _run(tmp_path, "stability-scan")
    assert code == 0
    rows = _rows(out / "stability_scan.csv")
    assert rows[0] == ["lambda_a", "lambda_b", "feasible", "margin", "worst_abscissa"]
    assert [(r[0], r[1]) for r in rows[1:]] == [("0.5", "0.5"), ("0.5", "1.0"), ("1.0", "0.5"), ("1.0", "1.0")]
    assert all(r[2] in ("0", "1") for r in rows[1:])


def test_erlang_check_csv(tmp_path):
    code, out = _run(tmp_path, "erlang-check")
    assert code == 0
    rows = _rows(out / "erlang_check.csv")
    assert rows[0] == ["k", "w1_distance"]
    assert [r[0] for r in rows[1:]] == ["1", "4", "16"]


def test_oracle_validate_outputs(tmp_path):
    code, out = _run(tmp_path, "oracle-validate", "--seed", "5")
    assert code == 0
    assert _rows(out / "oracle.csv")[0] == ["time_s", "frac_h", "frac_a", "se_h", "se_a"]
    assert (out / "oracle_vs_ode.csv").exists() and (out / "oracle_modes.csv").exists()


def test_equilibrium_json(tmp_path):
    code, out = _run(tmp_path, "equilibrium")
    assert code == 0
    record = json.loads((out / "equilibrium.json").read_text())
    assert record["residual"] <= 1e-10
    assert record["distinct_equilibria"] == 1


@pytest.mark.parametrize("command", COMMANDS)
def test_every_command_is_byte_deterministic(tmp_path, command):
    extra = []
    if command == "ngsim":
        prof = tmp_path / "speed.csv"
        prof.write_text("time_s,speed_mps\n0,12\n2,6\n5,10\n")
        extra = ["--profile", str(prof)]
    if command == "sweep":
        extra = ["--axis", "initial_fraction"]
    code_a, out_a = _run(tmp_path / "a", command, "--seed", "9", *extra)
    code_b, out_b = _run(tmp_path / "b", command, "--seed", "9", *extra)
    assert code_a == code_b == 0
    files_a = sorted(p.name for p in out_a.iterdir())
    assert files_a == sorted(p.name for p in out_b.iterdir())
    assert files_a
    for name in files_a:
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_exit_codes(tmp_path, capsys):
    code, _ = _run(tmp_path, "simulate", config="gamma = 3\n")
    assert code == 1
    assert "fast.cfg:1" in capsys.readouterr().err
    code, _ = _run(tmp_path, "simulate", config="step_h = 0.2\n")
    assert code == 2
    code, _ = _run(tmp_path, "equilibrium", config="k = 20\nequilibrium_tol = 1e-30\n")
    assert code == 2
    code, _ = _run(tmp_path, "simulate", "--preset", "nope", config="")
    assert code == 1
    code, _ = _run(tmp_path, "simulate", config="grid_step = 0.3\n")
    assert code == 0
    code, _ = _run(tmp_path, "stability-scan", config="grid_step = 0.3\n")
    assert code == 1


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path)]) == 1


def test_dump_config_round_trips(tmp_path):
    code, out = _run(tmp_path, "erlang-check", "--dump-config")
    assert code == 0
    again = main(["erlang-check", "--config", str(out / "config.txt"), "--out", str(tmp_path / "again")])
    assert again == 0
    assert (out / "erlang_check.csv").read_bytes() == (tmp_path / "again" / "erlang_check.csv").read_bytes()


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "pavtraffic.cli", "erlang-check", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "144" in proc.stdout
