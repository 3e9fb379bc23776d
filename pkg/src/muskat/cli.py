"""Command line entry point: ``muskat {run,check,mms,refine,plot}``.

Exit codes: 0 when every hard invariant passes, 1 on an invariant
violation (the report path is printed), 2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .coupler import MarchAborted, Problem, run_march, schauder_solve
from .diagnostics import Check, summarize
from .errors import MuskatError, OutputError, ScenarioError
from .scenario_io import (SnapshotEntry, format_scenario, format_validation, output_dir, read_snapshot,
                          resolve_scenario, validate, write_report, write_snapshot, write_traces)
from .studies import mms_convergence, ratios, refinement_level

log = logging.getLogger("muskat")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
RAMP = " .:-=+*#%@"


def _levels(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("levels must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="muskat", description="Two-phase Brinkman/transport simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write snapshots, traces and a report")
    r.add_argument("scenario", help="scenario file or preset:<name>")
    r.add_argument("--out", default="out", help="output directory (MUSKAT_OUTPUT_DIR overrides)")
    r.add_argument("--mode", choices=("march", "picard"), default=None)

    c = sub.add_parser("check", help="parse and validate a scenario")
    c.add_argument("scenario")
    c.add_argument("--out", default=None, help="also write the validation report here")

    m = sub.add_parser("mms", help="manufactured-solution convergence study")
    m.add_argument("--levels", type=_levels, default=[32, 64, 128])
    m.add_argument("--min-ratio", type=float, default=3.4)
    m.add_argument("--velocity-solver", choices=("direct", "pcg"), default="direct")

    f = sub.add_parser("refine", help="renormalization, mixing and weak-form refinement study")
    f.add_argument("scenario")
    f.add_argument("--levels", type=_levels, default=[32, 64, 128])
    f.add_argument("--jobs", type=int, default=1, help="levels run in parallel processes")

    pl = sub.add_parser("plot", help="render a snapshot field as text or PGM")
    pl.add_argument("snapshot")
    pl.add_argument("--field", default="rho")
    pl.add_argument("--format", choices=("text", "pgm"), default="text")
    pl.add_argument("--output", default=None, help="write here instead of stdout")
    return p


# ------------------------------------------------------------------ run

def _snapshot_steps(n_steps: int, cadence: int) -> list[int]:
    steps = list(range(0, n_steps + 1, cadence))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def write_outputs(traj, scenario, out: Path, summary, extra_rows=(), extra_checks=(), tables=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.scn").write_text(format_scenario(scenario))
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    index = ["step,time,file"]
    for k in _snapshot_steps(len(traj.times) - 1, scenario.cadence):
        name = f"snap_{k:06d}.csv"
        entry = SnapshotEntry(traj.times[k], traj.states[k], traj.velocities[k])
        write_snapshot(entry, snap_dir / name, traj.grid)
        index.append(f"{k},{format(traj.times[k], '.17g')},{name}")
    (snap_dir / "index.csv").write_text("\n".join(index) + "\n")
    write_traces(traj.rho_out, out / "traces_rho.csv")
    write_traces(traj.nu_out, out / "traces_nu.csv")
    write_traces(traj.rho_in, out / "traces_rho_in.csv")
    write_traces(traj.nu_in, out / "traces_nu_in.csv")
    steps = [("k", "time", "dt", "iterations", "divergence_residual", "momentum_residual", "energy_residual",
              "substeps")]
    body = [(s.step, s.time, s.dt, s.iterations, s.divergence_residual, s.momentum_residual,
             s.energy_residual, s.substeps) for s in traj.summaries]
    all_tables = {"steps": (steps[0], body), **(tables or {})}
    return write_report(out / "report.txt", scenario.name, [*summary.rows, *extra_rows],
                        [*summary.checks, *extra_checks], tables=all_tables)


def cmd_run(args) -> int:
    sc = resolve_scenario(args.scenario)
    if args.mode:
        sc = replace(sc, mode=args.mode)
    out = output_dir(args.out)
    rep = validate(sc)
    if not rep.ok:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "report.txt"
        checks = [Check(f"validation_{i.label}", 1.0, 0.0) for i in rep.issues]
        write_report(path, sc.name, [("validation", "issues", len(rep.issues))], checks)
        sys.stdout.write(format_validation(rep))
        print(f"report: {path}")
        return EXIT_FAIL
    pb = Problem.from_scenario(sc)
    extra_rows, extra_checks, tables = [], [], {}
    try:
        if sc.mode == "march":
            traj = run_march(pb)
        else:
            traj, hist = schauder_solve(pb, tol_P=sc.tol_P, max_iter=sc.max_iter, theta=sc.theta,
                                        keep_iterates=False)
            extra_rows += [("picard", "iterations", hist.k_final), ("picard", "tol_P", hist.tol),
                           ("picard", "converged", str(hist.converged))]
            extra_checks.append(Check("picard_distance", hist.distances[-1], hist.tol, hard=False))
            tables["picard_iterations"] = (("k", "distance", "velocity_L2H1"), list(hist.rows()))
    except MarchAborted as exc:
        out.mkdir(parents=True, exist_ok=True)
        path = write_report(out / "report.txt", sc.name, [("aborted", "step", exc.step),
                                                          ("aborted", "cause", str(exc.cause))],
                            [Check("aborted", 1.0, 0.0)])
        print(f"run aborted: {exc}; report: {path}", file=sys.stderr)
        return EXIT_FAIL
    summary = summarize(traj, pb, sc.phases)
    path = write_outputs(traj, sc, out, summary, extra_rows, extra_checks, tables)
    status = "PASS" if summary.passed else "FAIL"
    print(f"{status}: {len(traj.times) - 1} steps to t={traj.times[-1]:.6g}; report: {path}")
    return EXIT_OK if summary.passed else EXIT_FAIL


def cmd_check(args) -> int:
    sc = resolve_scenario(args.scenario)
    rep = validate(sc)
    text = format_validation(rep)
    sys.stdout.write(text)
    if args.out:
        out = output_dir(args.out)
        out.mkdir(parents=True, exist_ok=True)
        checks = [Check(f"validation_{i.label}", max(i.magnitude, 1.0), 0.0) for i in rep.issues]
        rows = [("validation", f"issue_{k}", f"[{i.label}] {i.message}") for k, i in enumerate(rep.issues)]
        path = write_report(out / "check_report.txt", sc.name, rows or [("validation", "issues", 0)], checks)
        print(f"report: {path}")
    return EXIT_OK if rep.ok else EXIT_FAIL


def cmd_mms(args) -> int:
    rows = mms_convergence(args.levels, args.velocity_solver)
    print(f"{'n':>6} {'L2 velocity error':>20} {'ratio':>8} {'L2 pressure error':>20} {'iters':>6} {'max|div|':>10}")
    for r in rows:
        ratio = "" if np.isnan(r.ratio) else f"{r.ratio:.3f}"
        print(f"{r.n:>6} {r.velocity_error:>20.6e} {ratio:>8} {r.pressure_error:>20.6e} {r.iterations:>6} "
              f"{r.divergence_residual:>10.2e}")
    ok = all(r.ratio >= args.min_ratio for r in rows[1:]) and all(r.divergence_residual <= 1e-8 for r in rows)
    return EXIT_OK if ok else EXIT_FAIL


def _refine_one(args):
    scenario, n = args
    return refinement_level(scenario, n)[0]


def cmd_refine(args) -> int:
    sc = resolve_scenario(args.scenario)
    jobs = [(sc, n) for n in args.levels]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_refine_one, jobs))
    else:
        rows = [_refine_one(j) for j in jobs]
    cols = ("renormalization_defect", "mixed_area", "symmetric_difference", "weak_rho", "weak_nu", "weak_momentum")
    print(" ".join([f"{'n':>5}", f"{'steps':>6}", *[f"{c:>22}" for c in cols]]))
    for r in rows:
        print(" ".join([f"{r.n:>5}", f"{r.steps:>6}", *[f"{getattr(r, c):>22.6e}" for c in cols]]))
    print("ratios per halving:")
    for c in cols:
        vals = [getattr(r, c) for r in rows]
        if all(np.isfinite(vals)):
            print(f"  {c}: " + ", ".join(f"{q:.3f}" for q in ratios(vals)))
    return EXIT_OK


# ----------------------------------------------------------------- plot

def render_text(field: np.ndarray) -> str:
    """One character per cell, top row first; darker means larger."""
    lo, hi = float(np.nanmin(field)), float(np.nanmax(field))
    span = hi - lo if hi > lo else 1.0
    idx = np.clip(((field - lo) / span * (len(RAMP) - 1)).round().astype(int), 0, len(RAMP) - 1)
    rows = ["".join(RAMP[k] for k in idx[:, j]) for j in range(field.shape[1] - 1, -1, -1)]
    return "\n".join(rows) + f"\nrange [{lo:.6g}, {hi:.6g}]\n"


def render_pgm(field: np.ndarray) -> str:
    """Plain (P2) portable graymap, top row first."""
    lo, hi = float(np.nanmin(field)), float(np.nanmax(field))
    span = hi - lo if hi > lo else 1.0
    g = np.clip(((field - lo) / span * 255).round().astype(int), 0, 255)
    nx, ny = field.shape
    lines = ["P2", f"{nx} {ny}", "255"]
    lines += [" ".join(str(v) for v in g[:, j]) for j in range(ny - 1, -1, -1)]
    return "\n".join(lines) + "\n"


def cmd_plot(args) -> int:
    data = read_snapshot(args.snapshot)
    if args.field not in data:
        print(f"field {args.field!r} not in snapshot (have {', '.join(data)})", file=sys.stderr)
        return EXIT_USAGE
    field = data[args.field]
    if field.size == 0:
        print("snapshot has no rows", file=sys.stderr)
        return EXIT_USAGE
    text = render_text(field) if args.format == "text" else render_pgm(field)
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            raise OutputError(args.output, exc) from exc
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "check": cmd_check, "mms": cmd_mms, "refine": cmd_refine, "plot": cmd_plot}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OutputError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MuskatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
