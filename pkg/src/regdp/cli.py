"""Command-line front end.

    regdp run <config.json>
    regdp table1 [--eps 1e-8] [--out path] [--calibrate]
    regdp table2 [--eps 1e-8] [--out path]
    regdp figure <config.json> [--out path]

Exit codes: 0 success, 2 configuration error, 3 iteration cap exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import algorithms as alg
from . import harness
from .mdp import ContractError

EXIT_OK, EXIT_CONFIG, EXIT_CAP = 0, 2, 3


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = harness.RunConfig.from_dict(harness.load_config(args.config))
    out = args.out or cfg.output
    try:
        trace = harness.execute(cfg)
    except alg.CapExceeded as exc:
        trace = exc.trace
        trace.bound = harness.bound_curve(trace, **cfg.bound)
        if out:
            trace.write_csv(out)
        print(f"cap exceeded after N={trace.n_iters} final_err={trace.final_err:.6g}", file=sys.stderr)
        return EXIT_CAP
    if out:
        trace.write_csv(out)
    print(f"N={trace.n_iters} count={trace.count} converged={trace.converged} "
          f"final_err={trace.final_err:.6g}")
    return EXIT_OK


def _table_common(report, args, tol: float) -> None:
    _emit(report.to_csv(), args.out)
    for line in report.diff_report(tol):
        print(line, file=sys.stderr)


def cmd_table1(args) -> int:
    report = harness.table1(args.eps, args.preset, args.workers)
    _table_common(report, args, 0.25)
    if args.calibrate:
        for cal in harness.calibrate_table1(report, eps=args.eps, preset_name=args.preset):
            print("CALIBRATE " + cal.line(), file=sys.stderr)
    if any(c.iterations is None for c in report.cells):
        return EXIT_CAP
    return EXIT_OK


def cmd_table2(args) -> int:
    report = harness.table2(args.eps, args.preset, args.workers)
    _table_common(report, args, 0.25)
    if any(c.iterations is None for c in report.cells):
        return EXIT_CAP
    return EXIT_OK


def cmd_figure(args) -> int:
    d = harness.load_config(args.config)
    kind = d.get("figure", "overlay")
    out = args.out or d.get("output")
    if kind == "overlay":
        text, fits = harness.figure_overlay(d)
        _emit(text, out)
        if out:
            Path(str(out) + ".envelopes.json").write_text(json.dumps(fits, indent=1))
    elif kind == "snapshots":
        _emit(harness.figure_snapshots(d), out)
    else:
        raise ContractError(f"figure must be 'overlay' or 'snapshots', got {kind!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regdp", description="Regularized dynamic programming on tabular MDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configured algorithm and write its trace CSV")
    p.add_argument("config")
    p.add_argument("--out", help="trace CSV path (overrides the config's output)")
    p.set_defaults(func=cmd_run)

    for name, func, preset in (("table1", cmd_table1, "table1"), ("table2", cmd_table2, "table2")):
        p = sub.add_parser(name, help=f"reproduce the {name} iteration counts")
        p.add_argument("--eps", type=float, default=1e-8)
        p.add_argument("--out")
        p.add_argument("--preset", default=preset, choices=sorted(harness.PRESETS))
        p.add_argument("--workers", type=int, default=None)
        if name == "table1":
            p.add_argument("--calibrate", action="store_true",
                           help="scan schedule constants for rows outside tolerance")
        p.set_defaults(func=func)

    p = sub.add_parser("figure", help="emit error/bound overlay or snapshot CSV")
    p.add_argument("config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_figure)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except alg.CapExceeded as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
