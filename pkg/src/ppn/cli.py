"""Command line: ``ppn-bench run | sweep | report``.

Exit codes: 0 success, 1 a run failed, 2 invalid input.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .bench import (VARIANTS, emit_aggregates, emit_steps, make_variant, parse_aggregates,
                    run_benchmark, run_scene, summarize, summary_csv, write_atomic, _stem)
from .scenes import ParseError, ValidationError, bundled_scenes, load_scene, validate

EXIT_OK, EXIT_RUN_FAILURE, EXIT_INVALID = 0, 1, 2


class InputError(Exception):
    pass


def _variant_kw(args) -> dict:
    kw = {"alpha": args.alpha, "beta": args.beta, "linear_solver": args.solver}
    if args.max_iterations is not None:
        kw["max_iterations"] = args.max_iterations
    return kw


def _variant(name: str, args):
    kind, _, filt = name.partition("-")
    if kind not in VARIANTS or filt not in ("", "clamp", "mirror"):
        raise InputError(f"unknown variant {name!r} (choose from {', '.join(VARIANTS)}, optionally -clamp/-mirror)")
    if not filt and args.filter:
        name = f"{kind}-{args.filter}"
    try:
        return make_variant(name, **_variant_kw(args))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _scene(name: str, args, dt=None, tol=None):
    try:
        spec = load_scene(name)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    changes = {}
    if dt is not None:
        changes["dt"] = dt
    if tol is not None:
        changes["tol_v"] = tol
    spec = dataclasses.replace(spec, **changes)
    if args.seed is not None:
        spec.initial = dataclasses.replace(spec.initial, seed=args.seed)
    if args.steps is not None:
        spec.duration = args.steps * spec.dt
    validate(spec)
    return spec


def cmd_run(args) -> int:
    spec = _scene(args.scene, args, args.dt, args.tol)
    variant = _variant(args.variant, args)
    rec, _ = run_scene(spec, variant)
    agg = rec.aggregates
    if args.out:
        out = Path(args.out)
        write_atomic(out / f"{_stem(rec)}_steps.csv", emit_steps(rec.steps))
        write_atomic(out / "aggregate.csv", emit_aggregates([agg]))
    print(f"{rec.scene} {rec.variant}: {agg.n_steps} steps, {agg.total_newton_iterations} Newton iterations, "
          f"ph {100 * agg.ph_per_iter:.3f}%, {agg.total_eigendecompositions} eigendecompositions, "
          f"{agg.total_solve_failures} solve failures, {agg.runtime:.2f} s")
    if rec.failed:
        print(f"run failed: {rec.failure}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenes = args.scene or bundled_scenes()
    variants = [_variant(v, args) for v in (args.variant or ["pn", "pdn", "ppn"])]
    specs = [_scene(s, args, dt, tol) for s in scenes for dt in (args.dt or [None]) for tol in (args.tol or [None])]
    records = run_benchmark(specs, variants, args.out, workers=args.workers)
    aggs = [r.aggregates for r in records]
    try:
        print(summarize(aggs)[0])
    except LookupError:
        print(emit_aggregates(aggs))
    failed = [r for r in records if r.failed]
    for r in failed:
        print(f"run failed: {r.scene}/{r.variant}: {r.failure}", file=sys.stderr)
    return EXIT_RUN_FAILURE if failed else EXIT_OK


def cmd_report(args) -> int:
    aggs = []
    for path in args.csv:
        try:
            aggs += parse_aggregates(Path(path).read_text())
        except (OSError, ValueError, StopIteration) as exc:
            raise InputError(f"{path}: {exc}") from None
    text, _ = summarize(aggs)
    print(text)
    if args.out:
        write_atomic(Path(args.out), summary_csv(aggs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppn-bench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def solver_flags(sp):
        sp.add_argument("--filter", choices=["clamp", "mirror"], help="eigenvalue filter (default clamp)")
        sp.add_argument("--alpha", type=float, default=0.5, help="PPN tightening factor")
        sp.add_argument("--beta", type=float, default=2.0, help="PPN release factor")
        sp.add_argument("--seed", type=int, help="override the scene's perturbation seed")
        sp.add_argument("--solver", choices=["pcg", "llt"], default="pcg", help="linear solver")
        sp.add_argument("--steps", type=int, help="override the number of steps")
        sp.add_argument("--max-iterations", type=int, help="Newton iteration limit per step")

    run = sub.add_parser("run", help="one scene with one variant")
    run.add_argument("--scene", required=True, help="bundled scene name or .toml path")
    run.add_argument("--variant", default="ppn", help="plain, pn, pdn or ppn")
    run.add_argument("--dt", type=float)
    run.add_argument("--tol", type=float, help="velocity-step tolerance (m/s)")
    run.add_argument("--out", help="output directory for CSV files")
    solver_flags(run)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="scenes x variants x dt x tol")
    sweep.add_argument("--scene", action="append", help="repeatable; default: all bundled scenes")
    sweep.add_argument("--variant", action="append", help="repeatable; default: pn, pdn, ppn")
    sweep.add_argument("--dt", type=float, action="append")
    sweep.add_argument("--tol", type=float, action="append")
    sweep.add_argument("--workers", type=int, default=1)
    sweep.add_argument("--out", help="output directory for CSV files")
    solver_flags(sweep)
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="summarize aggregate CSV files")
    report.add_argument("csv", nargs="+")
    report.add_argument("--out", help="write the summary table as CSV")
    report.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except (InputError, ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except LookupError as exc:  # MissingBaseline
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:  # MissingData
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
