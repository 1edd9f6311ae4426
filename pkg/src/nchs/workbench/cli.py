"""Command-line driver.

Subcommands cover the everyday workflows: run a simulation, run the control
optimizer, verify gradients and linearizations against finite differences,
produce an energy report, and validate a material bundle.  Exit codes are
stable: 0 success, 2 configuration problems, 3 solver failures, 4 a
verification check that ran but failed, 5 data-file input/output errors.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

import numpy as np

from .. import optimize as opt
from ..controls import ControlField, tracking_targets_from_states
from ..forward import SolverError, simulate
from ..kernels import build as build_kernel
from ..material import validate as validate_laws
from ..sensitivity import _smooth_random_control, taylor_check
from . import reports, storage
from .config import (
    ConfigError,
    RunConfig,
    load_config,
    make_grid,
    make_initial,
    make_kernel,
    make_laws,
    make_solver,
    make_weights,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4
EXIT_IO = 5


def _load(path: str) -> RunConfig:
    try:
        cfg = load_config(path)
    except OSError as exc:
        raise ConfigError([f"cannot read config {path!r}: {exc}"]) from exc
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return cfg


def _setup(cfg: RunConfig):
    grid = make_grid(cfg)
    dk = build_kernel(make_kernel(cfg), grid)
    laws = make_laws(cfg)
    solver = make_solver(cfg)
    phi0, u0 = make_initial(cfg, grid)
    return grid, dk, laws, solver, phi0, u0


def _build_problem(cfg: RunConfig) -> opt.Problem:
    grid, dk, laws, solver, phi0, u0 = _setup(cfg)
    weights = make_weights(cfg)
    kind = cfg["target.kind"]
    if kind != "zero":
        if kind == "shifted-run":
            shift = cfg["initial.shift"] + cfg["target.shift"]
            phi_t, u_t = make_initial(cfg, grid, shift_override=shift)
        else:
            phi_t, u_t = phi0, u0
        ref = simulate(phi_t, u_t, None, dk, laws, solver)
        states = [ref.state_arrays(n) for n in range(ref.n_steps + 1)]
        weights = tracking_targets_from_states(weights, states)
    return opt.Problem(phi0, u0, dk, laws, solver, weights)


def _write_outputs(cfg: RunConfig, args, traj, dk, laws) -> None:
    traj_path = getattr(args, "output", None) or cfg.get("output.trajectory")
    if traj_path:
        storage.save_trajectory(traj_path, traj)
        print(f"trajectory -> {traj_path}")
    report_path = getattr(args, "report", None) or cfg.get("output.report")
    if report_path:
        reports.write_report(report_path, traj, dk, laws)
        print(f"report     -> {report_path}")
    fields_dir = getattr(args, "fields", None) or cfg.get("output.fields_dir")
    if fields_dir:
        written = reports.dump_fields(traj, fields_dir, every=cfg["output.fields_every"])
        print(f"fields     -> {fields_dir} ({len(written)} files)")


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    grid, dk, laws, solver, phi0, u0 = _setup(cfg)
    traj = simulate(phi0, u0, None, dk, laws, solver)
    traj.provenance = f"nchs simulate config={cfg.digest[:16]}"
    er = reports.write_report(args.report, traj, dk, laws) if args.report else None
    if er is None:
        from ..forward import energy_report
        er = energy_report(traj, dk, laws)
    print(reports.summarize(traj, er))
    _write_outputs(cfg, args, traj, dk, laws)
    return EXIT_OK


def cmd_energy_report(args) -> int:
    cfg = _load(args.config)
    grid, dk, laws, solver, phi0, u0 = _setup(cfg)
    traj = simulate(phi0, u0, None, dk, laws, solver)
    from ..forward import energy_report
    er = energy_report(traj, dk, laws)
    out = args.report or cfg.get("output.report")
    if out:
        reports.write_report(out, traj, dk, laws)
        print(f"report -> {out}")
    else:
        print(reports.render_report(traj, er), end="")
    print(reports.summarize(traj, er), file=sys.stderr)
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load(args.config)
    problem = _build_problem(cfg)
    lower = cfg["control.lower"]
    upper = cfg["control.upper"]
    v0 = problem.zero_control(lower, upper)
    options = opt.OptimizerOptions(
        max_iterations=args.max_iterations or cfg["optimize.max_iterations"],
        step_init=cfg["optimize.step_init"],
        kkt_tol=cfg["optimize.kkt_tol"],
        armijo=cfg["optimize.armijo"],
    )
    result = opt.projected_gradient_descent(problem, v0, options)
    print(result.summary())
    ctrl_path = args.output or cfg.get("output.control")
    if ctrl_path:
        storage.save_control(ctrl_path, result.control, problem.cfg.dt,
                             provenance=f"nchs optimize config={cfg.digest[:16]}")
        print(f"control    -> {ctrl_path}")
    traj_path = cfg.get("output.trajectory")
    if traj_path:
        storage.save_trajectory(traj_path, result.trajectory)
        print(f"trajectory -> {traj_path}")
    return EXIT_OK if result.converged else EXIT_CHECK


def cmd_grad_check(args) -> int:
    cfg = _load(args.config)
    problem = _build_problem(cfg)
    rng = np.random.default_rng(cfg["initial.seed"])
    v = _smooth_random_control(problem.grid, problem.cfg.n_steps, 0.1, rng)
    report = opt.fd_gradient_check(
        problem, v,
        n_directions=args.directions or cfg["check.directions"],
        eps=cfg["check.eps"],
        seed=cfg["initial.seed"],
    )
    print(report)
    tol = args.tol if args.tol is not None else cfg["check.tol"]
    if report.max_rel_error > tol:
        print(f"FAIL: max relative error {report.max_rel_error:.3e} > {tol:.1e}")
        return EXIT_CHECK
    print(f"PASS: max relative error {report.max_rel_error:.3e} <= {tol:.1e}")
    return EXIT_OK


def cmd_lin_check(args) -> int:
    cfg = _load(args.config)
    grid, dk, laws, solver, phi0, u0 = _setup(cfg)
    rng = np.random.default_rng(cfg["initial.seed"])
    v = ControlField.zeros(grid, solver.n_steps)
    h = _smooth_random_control(grid, solver.n_steps, 1.0, rng)
    report = taylor_check(phi0, u0, v, h, dk, laws, solver)
    print(report)
    threshold = args.ratio
    if report.decay_ratio > threshold:
        print(f"FAIL: remainder decay ratio {report.decay_ratio:.3e} > {threshold}")
        return EXIT_CHECK
    print(f"PASS: remainder decay ratio {report.decay_ratio:.3e} <= {threshold}")
    return EXIT_OK


def cmd_validate_laws(args) -> int:
    cfg = _load(args.config)
    laws = make_laws(cfg)
    report = validate_laws(laws)
    print(report)
    if not report.passed:
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nchs",
        description="Nonlocal two-phase flow solver and control optimizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the forward solver")
    p.add_argument("config")
    p.add_argument("--output", help="write the trajectory here (binary)")
    p.add_argument("--report", help="write the energy/diagnostics CSV here")
    p.add_argument("--fields", help="dump plot-ready field tables to this directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="minimize the tracking cost over controls")
    p.add_argument("config")
    p.add_argument("--output", help="write the optimized control here (binary)")
    p.add_argument("--max-iterations", type=int, default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("grad-check", help="compare the adjoint gradient with finite differences")
    p.add_argument("config")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--directions", type=int, default=None)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("lin-check", help="Taylor-remainder test of the tangent sweep")
    p.add_argument("config")
    p.add_argument("--ratio", type=float, default=0.2,
                   help="maximum allowed remainder ratio across the epsilon sweep")
    p.set_defaults(func=cmd_lin_check)

    p = sub.add_parser("energy-report", help="run and emit the energy ledger CSV")
    p.add_argument("config")
    p.add_argument("--report", help="write the CSV here instead of stdout")
    p.set_defaults(func=cmd_energy_report)

    p = sub.add_parser("validate-laws", help="check a material bundle against the structural hypotheses")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate_laws)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except storage.StorageError as exc:
        print(f"data file error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
