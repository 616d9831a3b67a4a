"""Command line entry point ``iss-smallgain``.

Exit codes: 0 when every requested check passed, 1 when a check failed (the
JSON report then carries the witness or the failing numbers), 2 on usage or
parse errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .dynamics import parse_input
from .kfun import GridSpec, KFunError, parse_fn
from .report import COMMANDS, Options, build_report, error_report
from .specfile import SpecError, read_spec


class _Parser(argparse.ArgumentParser):
    """argparse parser that raises instead of exiting, so usage errors can be
    reported in JSON as well."""

    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _grid(text: str) -> GridSpec:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected rmin,rmax,points")
    try:
        return GridSpec(float(parts[0]), float(parts[1]), int(parts[2]))
    except (ValueError, KFunError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _fn(text: str):
    try:
        return parse_fn(text)
    except KFunError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _signal(text: str):
    try:
        return parse_input(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _vector(text: str):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="iss-smallgain", description="Small-gain analysis of mixed sum/max ISS networks.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("spec", help="network file (.ganet)")
    p.add_argument("--alpha", type=_fn, help="robustness function, e.g. '0.1*r' (default: sweep from the file)")
    p.add_argument("--grid", type=_grid, help="rmin,rmax,points")
    p.add_argument("--u", type=_signal, default=None, help="const:<v>, step:<v>@<t> or sine:<a>,<f>[,<c>]")
    p.add_argument("--T", type=float, help="simulation horizon")
    p.add_argument("--dt", type=float, help="RK4 step")
    p.add_argument("--x0", type=_vector, help="initial state, comma separated (default: all ones)")
    p.add_argument("--out", help="directory for CSV output (default: current directory)")
    p.add_argument("--json", action="store_true", help="print the full JSON report")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _summary(rep: dict) -> str:
    lines = [f"{rep['command']} {rep['spec']}: {rep['status'].upper()}"]
    res = rep["results"]
    if "analyze" in res:
        a = res["analyze"]
        lines.append(f"  small-gain: {a['status']}  alpha = {a['alpha']}")
        if a["cycle_margins"]:
            lines.append("  cycle margins: " + ", ".join(f"{m:.6g}" for m in a["cycle_margins"]))
        if a["rho"] is not None:
            lines.append(f"  spectral radius (all rows summed): {a['rho']:.6g}")
        if a["witness"] is not None:
            lines.append(f"  witness: {a['witness']}  (re-checked: {a['witness_rechecked']})")
    if "transform" in res:
        t = res["transform"]
        lines.append(f"  sum-to-max: cycles below id = {t['cycles_below_id']}, alpha = {t['alpha']}")
    if "path" in res:
        p = res["path"]
        lines.append(f"  path ({p['method']}): " + ", ".join(p["sigma"])[:160])
        lines.append(f"  minimum margin {p['validation']['min_margin']:.4g}, external margin {p['phi'][:60]}")
    if "lyap" in res:
        d = res["lyap"]["decrease"]
        lines.append(f"  decrease: {d['passed']}/{d['gated'] - d['skipped_ties']} passed, "
                     f"worst ratio {d['worst_ratio']:.4g}, gradient error {d['gradient_rel_err']:.2e}")
    if "simulate" in res:
        s = res["simulate"]
        e = s["estimates"]
        lines.append(f"  endpoint x({s['T']:g}) = " + ", ".join(f"{v:.6g}" for v in s["endpoint"]))
        lines.append(f"  estimates: {e['status']}, GS holds {e['gs']['holds']}, AG holds {e['ag']['holds']}")
        if s["csv"]:
            lines.append(f"  trajectory written to {s['csv']}")
    for err in rep["errors"]:
        lines.append(f"  error [{err['stage']}]: {err['message']}")
    return "\n".join(lines)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    command = argv[0] if argv else ""
    want_json = "--json" in argv
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        if want_json:
            print(json.dumps(error_report(command, "", exc, "usage"), indent=2))
        else:
            parser.print_usage(sys.stderr)
            print(f"iss-smallgain: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        model = read_spec(args.spec)
    except (OSError, SpecError) as exc:
        rep = error_report(args.command, args.spec, exc)
        if args.json:
            print(json.dumps(rep, indent=2))
        else:
            print(f"{args.spec}: {exc}", file=sys.stderr)
        return 2
    stem = os.path.splitext(os.path.basename(args.spec))[0]
    opts = Options(
        alpha=args.alpha,
        grid=args.grid,
        u=args.u if args.u is not None else parse_input("const:0"),
        T=args.T,
        dt=args.dt,
        x0=args.x0,
        out=args.out if args.out is not None else (os.getcwd() if args.command in ("simulate", "report") else None),
        stem=stem,
    )
    if opts.x0 is not None and len(opts.x0) != model.n:
        exc = ValueError(f"--x0 has {len(opts.x0)} entries, the network has {model.n} subsystems")
        rep = error_report(args.command, args.spec, exc, "usage")
        print(json.dumps(rep, indent=2) if args.json else f"iss-smallgain: error: {exc}",
              file=sys.stdout if args.json else sys.stderr)
        return 2
    rep = build_report(args.command, model, opts, args.spec)
    print(json.dumps(rep, indent=2) if args.json else _summary(rep))
    return rep["exit_code"]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
