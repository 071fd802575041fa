"""Command-line harness for scenario solves, sweeps, and overhead tables."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .experiments import ExperimentSpec, emit_overhead_table, run_experiment, \
    write_csv
from .network import ScenarioError, degrade_csi, generate_channels, \
    generate_layout, load_scenario
from .pipeline import SolverSettings, solve_qos
from .protocol import compare_runs

EXAMPLE_SCENARIO = """\
# coordbeam scenario
network:
  J: 3            # coordinating cells
  K: 5            # users per group
  M: 64           # BS antennas
  gamma_db: 10.0  # per-user SINR target
  p_dbw: 10.0     # per-BS power budget
  sigma2: 1.0
  pathloss_exponent: 3.5
  cell_radius: 1.0
  boundary_snr_db: -5.0
seeds:
  layout: [0, 1, 2, 3, 4]
  channel: [0, 1, 2, 3]
solver:
  rho: 0.01
  tol_inner: 1.0e-3
  tol_outer: 1.0e-3
"""


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coordbeam",
        description="Coordinated multicast beamforming solver and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a seeded sweep and emit CSV tables")
    run.add_argument("scenario", help="scenario YAML path")
    run.add_argument("--sweep-axis", choices=["M", "K", "J", "error_fraction"])
    run.add_argument("--sweep-values", type=str, default="",
                     help="comma-separated sweep values")
    run.add_argument("--layout-seeds", type=int, default=None,
                     help="use seeds 0..n-1 instead of the scenario's list")
    run.add_argument("--channel-seeds", type=int, default=None)
    run.add_argument("--outdir", default="results")
    run.add_argument("--rho", type=float, default=None)
    run.add_argument("--tol-inner", type=float, default=None)
    run.add_argument("--tol-outer", type=float, default=None)
    run.add_argument("--error-fraction", type=float, default=0.0,
                     help="imperfect-CSI error fraction in [0, 1]")
    run.add_argument("--timings", action="store_true",
                     help="also write wall-clock times (not byte-stable)")

    solve = sub.add_parser("solve", help="solve one realization and print a summary")
    solve.add_argument("scenario")
    solve.add_argument("--layout-seed", type=int, default=0)
    solve.add_argument("--channel-seed", type=int, default=0)
    solve.add_argument("--error-fraction", type=float, default=0.0)
    solve.add_argument("--trace-out", default=None,
                       help="write solver traces to this CSV path")
    solve.add_argument("--distributed", action="store_true",
                       help="run the BS/CPU protocol and print the ledger")

    over = sub.add_parser("overhead", help="emit the fronthaul overhead table")
    over.add_argument("scenario")
    over.add_argument("--axis", choices=["M", "K"], default="M")
    over.add_argument("--values", type=str, required=True)
    over.add_argument("--seeds", type=int, default=3)
    over.add_argument("--outdir", default="results")

    tmpl = sub.add_parser("template", help="print an example scenario file")
    tmpl.add_argument("--out", default=None)
    return parser


def _settings_from(solver_overrides, args):
    settings = SolverSettings().with_overrides(solver_overrides)
    for name in ("rho", "tol_inner", "tol_outer"):
        value = getattr(args, name, None)
        if value is not None:
            settings = settings.with_overrides({name: value})
    return settings


def _cmd_run(args):
    config, seeds, solver = load_scenario(args.scenario)
    values = [v for v in args.sweep_values.split(",") if v] if args.sweep_values else []
    values = [float(v) if args.sweep_axis == "error_fraction" else int(v)
              for v in values]
    spec = ExperimentSpec(
        config=config,
        sweep_axis=args.sweep_axis,
        sweep_values=values,
        layout_seeds=(list(range(args.layout_seeds)) if args.layout_seeds
                      else seeds["layout"]),
        channel_seeds=(list(range(args.channel_seeds)) if args.channel_seeds
                       else seeds["channel"]),
        outdir=args.outdir,
        settings=_settings_from(solver, args),
        error_fraction=args.error_fraction,
        emit_timings=args.timings,
    )
    report = run_experiment(spec)
    print(f"wrote {len(report['rows'])} runs to {report['outdir']} "
          f"({report['failures']} failures)")
    return 1 if report["failures"] and not report["rows"] else 0


def _cmd_solve(args):
    config, _, solver = load_scenario(args.scenario)
    settings = _settings_from(solver, args)
    layout = generate_layout(config, args.layout_seed)
    channels = generate_channels(config, layout, args.channel_seed)
    if args.error_fraction > 0:
        channels = degrade_csi(channels, args.error_fraction,
                               seed=args.channel_seed + 10_000)
    if args.distributed:
        report = compare_runs(channels, config, settings)
        res = report["monolithic"]
        ledger = report["ledger"]
        print(f"max beamformer difference: {report['max_beamformer_diff']:.3e}")
        print(f"fronthaul: complex={ledger.stage23_complex} "
              f"reals={ledger.stage1_reals} "
              f"(I_lambda={ledger.lambda_iterations})")
    else:
        res = solve_qos(channels, config, settings)
    print(f"margin: {res.margin:.6g} ({res.margin_db:.3f} dB)  "
          f"feasible: {res.feasible}")
    print(f"min SINR/target: {float(np.min(res.sinr / config.gamma_vec)):.6f}")
    print(f"outer iterations: {res.sca.trace.iterations}  "
          f"dual iterations: {res.lambda_trace.iterations}")
    if args.trace_out:
        rows = [("lambda", it, "max_diff", diff)
                for it, diff, _ in res.lambda_trace.rows()]
        rows += res.sca.trace.rows()
        write_csv(args.trace_out, ["layer", "iteration", "metric", "value"], rows)
        print(f"traces written to {args.trace_out}")
    return 0 if res.feasible else 1


def _cmd_overhead(args):
    config, _, _ = load_scenario(args.scenario)
    values = [int(v) for v in args.values.split(",") if v]
    rows = emit_overhead_table(config, args.axis, values,
                               seeds=range(args.seeds), outdir=args.outdir)
    for row in rows:
        print(f"{args.axis}={row[0]}: semi={row[1]} central={row[2]} "
              f"ratio={row[3]}%")
    return 0


def _cmd_template(args):
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(EXAMPLE_SCENARIO)
        print(f"wrote {args.out}")
    else:
        print(EXAMPLE_SCENARIO, end="")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "overhead":
            return _cmd_overhead(args)
        if args.command == "template":
            return _cmd_template(args)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
