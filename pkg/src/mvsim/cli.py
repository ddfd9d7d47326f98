"""Command line front end.

Subcommands: ``run`` (all configured methods), ``fp`` / ``malliavin`` (run a
config restricted to that single method), ``presets`` (table of shipped
presets), ``check-ellipticity`` (sampled spectrum floor of a preset's
diffusion).  Exit codes: 0 success, 1 a method failed hard, 2 bad config or
usage.  The default output directory comes from --outdir, then the
MVSIM_OUTDIR environment variable, then ./mvsim-out.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .coefficients import check_ellipticity
from .errors import ConfigError, MvsimError
from .harness import list_presets, run_experiment
from .presets import get_preset


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="path to a JSON experiment config")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's seed")
    p.add_argument("--outdir", default=None,
                   help="output directory root (default: MVSIM_OUTDIR or ./mvsim-out)")
    p.add_argument("--as-printed", dest="as_printed", action="store_true",
                   default=None,
                   help="use the preset's literally printed coefficient variant")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for per-path diagnostics")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvsim",
        description="Mean-field SDE simulation and density cross-validation")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("run", help="run every method in the config"))
    _add_run_flags(sub.add_parser("fp", help="run only the density solver"))
    _add_run_flags(sub.add_parser(
        "malliavin", help="run only the first-variation diagnostics"))

    sub.add_parser("presets", help="list shipped presets")

    pe = sub.add_parser("check-ellipticity",
                        help="sample the diffusion spectrum floor of a preset")
    pe.add_argument("preset")
    pe.add_argument("--samples", type=int, default=4096)
    pe.add_argument("--seed", type=int, default=0)
    return parser


def _print_report(report: dict) -> None:
    name = report["preset"]["name"]
    for method in sorted(report["methods"]):
        frag = report["methods"][method]
        line = f"{name}/{method}: {frag['status']}"
        if frag["status"] != "ok":
            line += f" ({frag.get('error', 'unknown error')})"
        print(line)
    for tkey in sorted(report["comparisons"]):
        entry = report["comparisons"][tkey]
        parts = " ".join(f"{k}={entry[k]:.6g}" for k in sorted(entry))
        print(f"  {tkey}: {parts}")


def _cmd_run(args, only: str | None = None) -> int:
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if not isinstance(config, dict):
        print("config error: config root must be a JSON object", file=sys.stderr)
        return 2
    if only is not None:
        config["methods"] = [only]
    try:
        report = run_experiment(config, outdir=args.outdir, threads=args.threads,
                                seed=args.seed, as_printed=args.as_printed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    _print_report(report)
    failed = [m for m, frag in report["methods"].items() if frag["status"] != "ok"]
    return 1 if failed else 0


def _cmd_presets() -> int:
    for row in list_presets():
        defaults = " ".join(f"{k}={v:g}" for k, v in row["defaults"].items())
        print(f"{row['name']:14s} d={row['dimension']} T={row['horizon']:g}  "
              f"{row['summary']}")
        print(f"{'':14s} defaults: {defaults}")
    return 0


def _cmd_check_ellipticity(args) -> int:
    try:
        inst = get_preset(args.preset)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    lo = np.array([b[0] for b in inst.fp_domain])
    hi = np.array([b[1] for b in inst.fp_domain])
    rep = check_ellipticity(inst.model, (0.0, inst.horizon), (lo, hi),
                            s_samples=None, n=args.samples, seed=args.seed)
    print(f"preset {inst.name}: sampled lambda_min = {rep.lambda_min_estimate:.6g} "
          f"over {rep.n_samples} points")
    print(f"  argmin: t={rep.argmin_t:.4g} x={np.array2string(rep.argmin_x, precision=4)}")
    nominal = inst.ellipticity_lambda
    print(f"  nominal floor: {nominal if nominal is not None else 'none declared'}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "fp":
            return _cmd_run(args, only="fp")
        if args.command == "malliavin":
            return _cmd_run(args, only="malliavin")
        if args.command == "presets":
            return _cmd_presets()
        if args.command == "check-ellipticity":
            return _cmd_check_ellipticity(args)
    except MvsimError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
