"""Command-line front end.

Subcommands: analyze (single-point feasibility), tradeoff (drop/delay curve),
simulate (one run under a schedule), verify (schedule battery against a
certificate), gamma-floor (smallest feasible L2 gain).  Every run writes a
manifest echoing the configuration so it can be reproduced exactly.

Exit codes: 0 success, 1 usage/parse error, 2 analysis negative, 3 internal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certificate import INPUT_OUTPUT, ZERO_INPUT, Certificate, check_certificate, grid_check
from .hybrid import (
    AttackSchedule,
    NetworkParams,
    enumerate_worst_schedules,
    zero_state,
)
from .lmi import SolverOptions, build_problem, solve
from .model import ModelError, assemble_closed_loop, load_model
from .sim import DisturbanceSignal, monitor_certificate, simulate
from .tradeoff import (
    SearchPolicy,
    gamma_floor,
    max_delay_for_drops,
    tradeoff_curve,
    write_curve_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NEGATIVE = 2
EXIT_INTERNAL = 3


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("NCSRESIL_OUT", "ncsresil-out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, args) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v)
              for k, v in vars(args).items() if k != "func"}
    manifest = {
        "tool": "ncsresil",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def _load(args):
    plant, controller, perf, net = load_model(args.model)
    cl = assemble_closed_loop(plant, controller, perf)
    return plant, controller, perf, net, cl


def _policy(args, mode: str) -> SearchPolicy:
    solver = SolverOptions(backend=args.backend, max_iterations=args.max_iterations,
                           tolerance=args.solver_tol, seed=args.seed)
    return SearchPolicy(
        rate_min=args.rate_min, rate_max=args.rate_max, rate_points=args.rate_points,
        bisection_tol=args.bisection_tol, drops_cap=args.drops_cap,
        mode=mode, gain=args.gamma, jobs=args.jobs, solver=solver,
    )


def _add_common(p):
    p.add_argument("--model", required=True, help="model file (YAML)")
    p.add_argument("--out-dir", default=None,
                   help="output directory (default $NCSRESIL_OUT or ./ncsresil-out)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default="barrier", choices=["barrier", "projection"])
    p.add_argument("--max-iterations", type=int, default=4000)
    p.add_argument("--solver-tol", type=float, default=1e-8)
    p.add_argument("--gamma", type=float, default=5.0, help="L2 gain bound")
    p.add_argument("--rate-min", type=float, default=1e-2)
    p.add_argument("--rate-max", type=float, default=None)
    p.add_argument("--rate-points", type=int, default=24)
    p.add_argument("--bisection-tol", type=float, default=1e-5)
    p.add_argument("--drops-cap", type=int, default=6)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def cmd_analyze(args) -> int:
    _, _, _, net0, cl = _load(args)
    out = _out_dir(args)
    _write_manifest(out, args)
    net = NetworkParams(net0.sample_period, args.drops, args.max_delay)
    if args.rate is not None:
        rates = [args.rate]
    else:
        rates = _policy(args, args.mode).rate_grid(net.sample_period)
    solver = SolverOptions(backend=args.backend, max_iterations=args.max_iterations,
                           tolerance=args.solver_tol, seed=args.seed)
    best = None
    for rate in rates:
        problem = build_problem(cl, float(rate), args.gamma, net, args.mode)
        res = solve(problem, solver)
        if res.feasible:
            best = res
            break
    if best is None:
        print(f"infeasible-or-unknown for drops={args.drops}, "
              f"max_delay={args.max_delay}", file=sys.stderr)
        return EXIT_NEGATIVE
    cert = best.certificate
    report = check_certificate(cert, cl)
    with open(out / "certificate.json", "w") as fh:
        fh.write(cert.to_json())
    with open(out / "margins.json", "w") as fh:
        json.dump({c.name: c.eigenvalue for c in report.conditions}, fh, indent=2)
    print(f"feasible: decay_rate={cert.decay_rate:.6g}, normalized margin "
          f"{best.margin:.3e}; certificate written to {out / 'certificate.json'}")
    return EXIT_OK


def cmd_tradeoff(args) -> int:
    _, _, _, net0, cl = _load(args)
    out = _out_dir(args)
    _write_manifest(out, args)
    modes = [args.mode] if args.mode != "both" else [ZERO_INPUT, INPUT_OUTPUT]
    curves = {}
    for mode in modes:
        policy = _policy(args, mode)
        points = tradeoff_curve(cl, net0.sample_period, policy)
        curves[mode] = points
        tag = "zero_input" if mode == ZERO_INPUT else "input_output"
        write_curve_csv(points, out / f"tradeoff_{tag}.csv")
        for p in points:
            with open(out / f"certificate_{tag}_drops{p.drops}.json", "w") as fh:
                fh.write(p.certificate.to_json())
        feasible = [p.drops for p in points]
        print(f"{mode}: feasible drop counts {feasible}; "
              f"max delays {[round(p.max_delay, 6) for p in points]}")
    if not args.no_plots:
        from .report import render_tradeoff_figure
        render_tradeoff_figure(curves, out / "tradeoff.png")
    return EXIT_OK if any(curves.values()) else EXIT_NEGATIVE


def _parse_disturbance(args, n_channels: int) -> DisturbanceSignal:
    if args.disturbance == "zero":
        return DisturbanceSignal.zero(n_channels)
    if args.disturbance == "sinusoid":
        return DisturbanceSignal.sinusoid(
            np.full(n_channels, args.disturbance_amplitude),
            np.full(n_channels, args.disturbance_frequency),
        )
    raise ValueError(f"unknown disturbance {args.disturbance!r}")


def cmd_simulate(args) -> int:
    _, _, _, net0, cl = _load(args)
    out = _out_dir(args)
    _write_manifest(out, args)
    cert = None
    if args.certificate:
        cert = Certificate.from_json(Path(args.certificate).read_text())
        net = cert.net
    else:
        net = NetworkParams(net0.sample_period, args.drops, args.max_delay)
    if args.schedule:
        schedule = AttackSchedule.from_json(Path(args.schedule).read_text())
    else:
        n_samples = int(np.ceil(args.horizon / net.sample_period)) + 1
        schedule = next(iter(enumerate_worst_schedules(net, n_samples, seed=args.seed)))
    from .hybrid import TargetSet
    target = TargetSet(net.max_drops, net.sample_period)
    x0 = zero_state(cl, timer=net.sample_period, phase=0)
    if args.x0:
        x0 = x0.replace(x=np.array(json.loads(args.x0), dtype=float))
    disturbance = _parse_disturbance(args, cl.n_disturbances)
    traj = simulate(cl, net, schedule, x0, disturbance, args.horizon, args.step)
    traj.to_csv(out / "trajectory.csv", cert=cert, target=target)
    traj.events_to_csv(out / "events.csv")
    if cert is not None:
        metrics = monitor_certificate(traj, cert, cl, disturbance)
        with open(out / "metrics.json", "w") as fh:
            json.dump(dataclasses.asdict(metrics), fh, indent=2)
        print(f"monitor clean: {metrics.clean}")
    if not args.no_plots:
        from .report import render_trajectory_figure
        render_trajectory_figure(traj, out / "trajectory.png", cert=cert, target=target)
    print(f"trajectory with {len(traj)} samples, {len(traj.events)} events "
          f"written to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    _, _, _, _, cl = _load(args)
    out = _out_dir(args)
    _write_manifest(out, args)
    cert = Certificate.from_json(Path(args.certificate).read_text())
    report = check_certificate(cert, cl)
    lines = []
    failures = 0
    if not report.passed:
        failures += 1
        lines.append("FAIL static conditions: "
                     + ", ".join(c.name for c in report.failed()))
    else:
        lines.append("PASS static conditions")
        worst, tau, phase = grid_check(cert, cl, args.grid_points)
        ok = worst < 0
        failures += 0 if ok else 1
        lines.append(f"{'PASS' if ok else 'FAIL'} timer-grid check "
                     f"(worst {worst:.3e} at tau={tau:.6g}, phase={phase})")
        net = cert.net
        horizon = args.horizon
        n_samples = int(np.ceil(horizon / net.sample_period)) + 1
        rng = np.random.default_rng(args.seed)
        schedules = list(enumerate_worst_schedules(
            net, n_samples, n_random=max(0, args.n_schedules - 4), seed=args.seed))
        x0_base = zero_state(cl, timer=net.sample_period, phase=0)
        for i, schedule in enumerate(schedules[: args.n_schedules]):
            x0 = x0_base.replace(x=rng.standard_normal(cl.n_states))
            dist = DisturbanceSignal.zero(cl.n_disturbances)
            traj = simulate(cl, net, schedule, x0, dist, horizon)
            metrics = monitor_certificate(traj, cert, cl, dist)
            if not metrics.clean:
                failures += 1
                lines.append(f"FAIL schedule {i}: jump_inc={metrics.max_jump_increase:.3e} "
                             f"flow_resid={metrics.max_flow_residual:.3e} "
                             f"envelope={metrics.envelope_excess:.3e}")
        lines.append(f"checked {min(len(schedules), args.n_schedules)} schedules")
    report_text = "\n".join(lines)
    (out / "verify_report.txt").write_text(report_text + "\n")
    print(report_text)
    return EXIT_OK if failures == 0 else EXIT_NEGATIVE


def cmd_gamma_floor(args) -> int:
    _, _, _, net0, cl = _load(args)
    out = _out_dir(args)
    _write_manifest(out, args)
    net = NetworkParams(net0.sample_period, args.drops, args.max_delay)
    policy = _policy(args, INPUT_OUTPUT)
    try:
        gain, cert = gamma_floor(cl, net, policy, tol=args.gamma_tol)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NEGATIVE
    with open(out / "certificate.json", "w") as fh:
        fh.write(cert.to_json())
    print(f"smallest feasible gain ~ {gain:.4g} (bisection tol {args.gamma_tol})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncsresil",
        description="DoS/delay resilience analysis for networked control loops",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="single-point certificate synthesis")
    _add_common(p)
    p.add_argument("--drops", type=int, required=True)
    p.add_argument("--max-delay", type=float, required=True)
    p.add_argument("--rate", type=float, default=None,
                   help="fixed decay rate (default: search the grid)")
    p.add_argument("--mode", default=ZERO_INPUT, choices=[ZERO_INPUT, INPUT_OUTPUT])
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("tradeoff", help="drop/delay trade-off curve")
    _add_common(p)
    p.add_argument("--mode", default=ZERO_INPUT,
                   choices=[ZERO_INPUT, INPUT_OUTPUT, "both"])
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("simulate", help="simulate one run under a schedule")
    _add_common(p)
    p.add_argument("--certificate", default=None, help="certificate JSON to monitor")
    p.add_argument("--schedule", default=None, help="schedule JSON file")
    p.add_argument("--drops", type=int, default=0)
    p.add_argument("--max-delay", type=float, default=0.0)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--x0", default=None, help="initial combined state as JSON list")
    p.add_argument("--disturbance", default="zero", choices=["zero", "sinusoid"])
    p.add_argument("--disturbance-amplitude", type=float, default=1.0)
    p.add_argument("--disturbance-frequency", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="schedule battery against a certificate")
    _add_common(p)
    p.add_argument("--certificate", required=True)
    p.add_argument("--n-schedules", type=int, default=20)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--grid-points", type=int, default=1000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gamma-floor", help="smallest feasible L2 gain")
    _add_common(p)
    p.add_argument("--drops", type=int, required=True)
    p.add_argument("--max-delay", type=float, required=True)
    p.add_argument("--gamma-tol", type=float, default=0.05)
    p.set_defaults(func=cmd_gamma_floor)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ModelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # internal failure
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
