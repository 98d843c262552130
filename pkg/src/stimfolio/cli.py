"""Command line entry point: ``stimfolio <stage> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from stimfolio import __version__
from stimfolio.config import load_config
from stimfolio.pipeline import STAGES, PipelineError, run_pipeline, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stimfolio",
        description="Simulate stimulation designs under formation uncertainty and build design portfolios.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--workers", type=int, help="simulation worker threads")
    common.add_argument("--out", metavar="DIR", help="run directory")
    common.add_argument(
        "--level", type=float, action="append", metavar="X",
        help="uncertainty level; repeat for several (overrides config)",
    )
    common.add_argument("--force", action="store_true", help="accept stale upstream artifacts")
    common.add_argument("--trace", action="store_true", help="write per-simulation time series for picked designs")
    common.add_argument("-v", "--verbose", action="count", default=0)

    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "run every stage in order",
        "sample": "Latin hypercube sample of uniform and non-uniform designs",
        "score": "nominal simulation of every sampled design",
        "frontier": "efficiency/energy-variance frontier and design picks",
        "evaluate": "simulate picked designs under each uncertainty level",
        "mix": "random portfolios of picked and EXL designs",
        "combine": "tangent combination line per level",
        "report": "recompute portfolios and write plot data",
    }
    for name in ("run",) + STAGES:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def config_from_args(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.out is not None:
        changes["out"] = args.out
    if args.level:
        changes["evaluation"] = dataclasses.replace(cfg.evaluation, levels=tuple(args.level))
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = config_from_args(args)
        if args.command == "run":
            run_pipeline(cfg, force=args.force, trace=args.trace)
        else:
            run_stage(args.command, cfg, force=args.force, trace=args.trace)
    except (PipelineError, ValueError) as exc:
        print(f"stimfolio: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
