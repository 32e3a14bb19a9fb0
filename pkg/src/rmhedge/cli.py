"""Command-line entry point: ``rmhedge run | presets list | validate``."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .config import load_config
from .errors import RMHedgeError
from .model import SamplePlan, validate_model
from .presets import DIVIDEND_FAMILIES, MODEL_FAMILIES, preset_model
from .scenario import default_out_dir, emit_report, probe_points, run_scenario


def _grid_sizes(text: str) -> tuple:
    try:
        sizes = tuple(int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like N or NxM, got '{text}'") from None
    if not sizes or any(n < 8 for n in sizes):
        raise argparse.ArgumentTypeError("each grid axis needs at least 8 nodes")
    return sizes


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rmhedge", description="Risk-minimizing hedging scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its artifacts")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out-dir", help="output directory (default: $RMHEDGE_OUT_DIR or ./rmhedge_out)")
    run.add_argument("--paths", type=_positive, help="number of simulated paths")
    run.add_argument("--grid", type=_grid_sizes, help="PIDE nodes per axis, e.g. 400 or 400x61")
    run.add_argument("--skip-pide", action="store_true", help="no PIDE, hedge or risk stages")
    run.add_argument("--mc-only", action="store_true", help="only the Monte Carlo probes")

    pre = sub.add_parser("presets", help="list model and dividend families")
    pre.add_argument("action", choices=["list"])

    val = sub.add_parser("validate", help="parse a config and check the model assumptions")
    val.add_argument("config")
    return ap


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.numerics["seed"] = args.seed
    if args.paths is not None:
        cfg.numerics["paths"] = args.paths
        cfg.numerics["mc_paths"] = args.paths
    if args.grid is not None:
        cfg.numerics["grid_override"] = list(args.grid)
    out = args.out_dir or cfg.outputs.get("dir") or default_out_dir()
    manifest = run_scenario(cfg, out, skip_pide=args.skip_pide, mc_only=args.mc_only)
    text, code = emit_report(manifest)
    sys.stdout.write(text)
    sys.stdout.write(f"artifacts in {out}\n")
    return code


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    model, div = preset_model(cfg.model_family, cfg.model_params, cfg.dividend_family, cfg.dividend_params)
    probes = probe_points(cfg, model, div)
    plan = SamplePlan(np.array(sorted({p[0] for p in probes})), np.array([p[1] for p in probes]))
    rep = validate_model(model, plan)
    sys.stdout.write(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0 if rep.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        sys.stdout.write("models:\n" + "".join(f"  {m}\n" for m in MODEL_FAMILIES))
        sys.stdout.write("dividends:\n" + "".join(f"  {d}\n" for d in DIVIDEND_FAMILIES))
        return 0
    except RMHedgeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
