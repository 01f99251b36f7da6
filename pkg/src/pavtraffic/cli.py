"""Command-line harness: ``pavtraffic <command> [--config PATH] [--out DIR] ...``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import erlang, oracle, stability
from .equilibrium import multistart_equilibria, solve_equilibrium
from .errors import NumericalError, ValidationError
from .integrator import fmt, simulate
from .scenario import (
    PairedScenario,
    ScenarioConfig,
    compare,
    load_config,
    preset,
    run_scenario,
    serialize_config,
    transient_metrics,
)
from .throughput import SpeedProfile

COMMANDS = (
    "simulate", "compare", "sweep", "ngsim", "stability-scan",
    "erlang-check", "oracle-validate", "equilibrium",
)
SWEEP_AXES = ("gamma", "initial_fraction", "rate_grid")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def _write_json(path, record):
    with open(path, "w") as fh:
        fh.write(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _map(fn, items, workers):
    """Ordered map; results come back in input order whatever the pool does."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _grid(step):
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ValidationError(f"grid_step must divide 1 exactly, got {step!r}")
    return [round((i + 1) * step, 12) for i in range(n)]


def _optional_profile(args):
    return SpeedProfile.from_csv(args.profile) if args.profile else None


def cmd_simulate(cfg, args):
    params = cfg.model_params()
    run = run_scenario(cfg, params, _optional_profile(args))
    run.trajectory.to_csv(os.path.join(args.out, "trajectory.csv"))
    run.series.to_csv(os.path.join(args.out, "throughput.csv"))
    _write_json(os.path.join(args.out, "summary.json"), {
        "label": cfg.label,
        "samples": len(run.trajectory),
        "steady_vphpl": run.steady,
        "l2_fluctuation": run.l2,
        "terminal_sum_xh": float(run.trajectory.sum_h[-1]),
        "terminal_sum_xa": float(run.trajectory.sum_a[-1]),
    })
    return f"{cfg.label}: steady {run.steady:.2f} vphpl, L2 {run.l2:.2f}"


def _comparison_rows(cmp):
    d, b = cmp.dependent.series, cmp.baseline.series
    return zip(d.times, d.speeds, d.capacity, b.capacity, cmp.gap_series)


def cmd_compare(cfg, args):
    cmp = compare(cfg, PairedScenario.from_config(cfg), _optional_profile(args))
    _write_csv(os.path.join(args.out, "compare.csv"),
               ["time_s", "v_mps", "c_dependent_vphpl", "c_baseline_vphpl", "gap_vphpl"],
               _comparison_rows(cmp))
    report = cmp.report()
    report["label"] = cfg.label
    _write_json(os.path.join(args.out, "compare.json"), report)
    return f"{cfg.label}: steady gap {cmp.steady_gap:+.2f} vphpl"


def _gamma_cell(job):
    cfg, gamma = job
    run = run_scenario(cfg, cfg.model_params(gamma=gamma), stride=cfg.sweep_stride)
    return [gamma, run.steady, run.l2]


def _fraction_cell(job):
    cfg, frac = job
    m = transient_metrics(cfg, cfg.model_params(), cfg.initial_state(frac_h0=frac), stride=cfg.sweep_stride)
    return [frac, m.convergence_time, m.overshoot]


def _rate_cell(job):
    cfg, l1, l2 = job
    run = run_scenario(cfg, cfg.model_params(lambda1=l1, lambda2=l2), stride=cfg.sweep_stride)
    return [l1, l2, run.steady, run.l2]


def cmd_sweep(cfg, args):
    axis = args.axis
    if axis == "gamma":
        values = [round(float(v), 12) for v in np.linspace(0.0, 1.0, cfg.sweep_points)]
        rows = _map(_gamma_cell, [(cfg, float(g)) for g in values], cfg.workers)
        header = ["gamma", "steady_vphpl", "l2_fluctuation"]
    elif axis == "initial_fraction":
        values = [round(float(v), 12) for v in np.linspace(0.0, 1.0, cfg.sweep_points)]
        rows = _map(_fraction_cell, [(cfg, float(f)) for f in values], cfg.workers)
        header = ["frac_h0", "convergence_time_s", "overshoot_vphpl"]
    else:
        grid = _grid(cfg.grid_step)
        rows = _map(_rate_cell, [(cfg, a, b) for a in grid for b in grid], cfg.workers)
        header = ["lambda_a", "lambda_b", "steady_vphpl", "l2_fluctuation"]
    _write_csv(os.path.join(args.out, f"sweep_{axis}.csv"), header, rows)
    return f"{axis}: {len(rows)} cells"


def cmd_ngsim(cfg, args):
    if not args.profile:
        raise ValidationError("ngsim needs --profile PATH (CSV with time_s,speed_mps)")
    raw = SpeedProfile.from_csv(args.profile)
    t0 = raw.times[0]
    span = raw.times[-1] - t0
    if span <= 0:
        raise ValidationError("speed profile must span a positive time range")
    shifted = SpeedProfile(raw.times - t0, raw.speeds)
    cfg = cfg.with_values(horizon_t=span)
    cmp = compare(cfg, PairedScenario.from_config(cfg), shifted)
    d, b = cmp.dependent.series, cmp.baseline.series
    _write_csv(os.path.join(args.out, "ngsim.csv"),
               ["time_s", "v_mps", "c_dependent_vphpl", "c_baseline_vphpl", "gap_vphpl"],
               zip(d.times + t0, d.speeds, d.capacity, b.capacity, cmp.gap_series))
    return f"{cfg.label}: mean gap {float(cmp.gap_series.mean()):+.2f} vphpl over {span:g} s"


def scan_cell(job):
    cfg, l1, l2 = job
    params = cfg.model_params(lambda1=l1, lambda2=l2, k=cfg.analysis_k)
    outcome = stability.search_common_lyapunov(
        stability.build_vertices(params), eps=cfg.lmi_eps, max_iter=cfg.lmi_max_iter
    )
    worst = stability.check_hurwitz_grid(params, cfg.hurwitz_samples).worst_abscissa
    feasible = outcome.status == "feasible"
    margin = outcome.certificate.margin if feasible else float("nan")
    return [l1, l2, "1" if feasible else "0", margin, worst]


def cmd_stability_scan(cfg, args):
    grid = _grid(cfg.grid_step)
    rows = _map(scan_cell, [(cfg, a, b) for a in grid for b in grid], cfg.workers)
    _write_csv(os.path.join(args.out, "stability_scan.csv"),
               ["lambda_a", "lambda_b", "feasible", "margin", "worst_abscissa"], rows)
    n_ok = sum(r[2] == "1" for r in rows)
    return f"{n_ok}/{len(rows)} cells certified at k={cfg.analysis_k}"


def cmd_erlang_check(cfg, args):
    ks = cfg.erlang_k_list()
    rows = [[str(k), erlang.wasserstein_to_dirac(erlang.design_rate(k, cfg.erlang_t_lock))] for k in ks]
    _write_csv(os.path.join(args.out, "erlang_check.csv"), ["k", "w1_distance"], rows)
    k_min = erlang.choose_k(cfg.erlang_t_lock, cfg.erlang_threshold)
    return f"smallest k with W1 <= {cfg.erlang_threshold:g}: {k_min}"


def cmd_oracle_validate(cfg, args):
    params = cfg.model_params()
    x0 = cfg.initial_state()
    dt = cfg.oracle_dt or None
    kw = dict(dt=dt, seed=args.seed, record_dt=cfg.oracle_record_dt)
    res = oracle.run_oracle(params, cfg.oracle_n, x0, cfg.horizon_t, mode=oracle.ERLANG_STAGE, **kw)
    res.to_csv(os.path.join(args.out, "oracle.csv"))
    traj = simulate(params, x0, cfg.integration(stride=1))
    ode = np.interp(res.times, traj.times, traj.sum_h)
    dev = np.abs(res.frac_h - ode)
    _write_csv(os.path.join(args.out, "oracle_vs_ode.csv"),
               ["time_s", "frac_h_oracle", "sum_xh_ode", "abs_dev"], zip(res.times, res.frac_h, ode, dev))
    modes = oracle.compare_modes(params, cfg.oracle_n, x0, cfg.horizon_t, **kw)
    _write_csv(os.path.join(args.out, "oracle_modes.csv"),
               ["time_s", "frac_h_erlang", "frac_h_deterministic", "gap"],
               zip(modes.times, modes.erlang.frac_h, modes.deterministic.frac_h, modes.gap))
    bound = 4.0 / np.sqrt(cfg.oracle_n) + 0.005
    return (f"max |oracle - ODE| = {dev.max():.4f} (bound {bound:.4f}); "
            f"max mode gap = {modes.max_gap:.4f}")


def cmd_equilibrium(cfg, args):
    params = cfg.model_params()
    result = solve_equilibrium(params, tol=cfg.equilibrium_tol)
    record = result.to_record(params)
    if cfg.multistart > 1:
        found = multistart_equilibria(params, n_starts=cfg.multistart, seed=args.seed, tol=cfg.equilibrium_tol)
        record["distinct_equilibria"] = len(found)
    _write_json(os.path.join(args.out, "equilibrium.json"), record)
    return f"residual {result.residual_inf:.3g} via {result.method}"


HANDLERS = {
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "ngsim": cmd_ngsim,
    "stability-scan": cmd_stability_scan,
    "erlang-check": cmd_erlang_check,
    "oracle-validate": cmd_oracle_validate,
    "equilibrium": cmd_equilibrium,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pavtraffic", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--out", default=".", help="output directory (created if missing)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--preset", help="scenario preset applied before --config")
    parser.add_argument("--axis", choices=SWEEP_AXES, default="gamma", help="sweep axis")
    parser.add_argument("--profile", help="speed profile CSV (time_s,speed_mps)")
    parser.add_argument("--workers", type=int, help="override the config worker count")
    parser.add_argument("--dump-config", action="store_true", help="write the resolved config.txt too")
    return parser


def resolve_config(args) -> ScenarioConfig:
    cfg = preset(args.preset) if args.preset else ScenarioConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if args.workers is not None:
        cfg = cfg.with_values(workers=args.workers)
    if args.seed < 0 or args.seed >= 2**64:
        raise ValidationError("--seed must be a 64-bit unsigned integer")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        if args.dump_config:
            with open(os.path.join(args.out, "config.txt"), "w") as fh:
                fh.write(serialize_config(cfg))
        message = HANDLERS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
