"""Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 configuration error, 3 one or more
grid cells failed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import DEFAULTS, ExperimentConfig, load_config, validate
from .errors import ConfigError, MissingArtifactError, RcError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

log = logging.getLogger("rcprune")


def _default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML file (defaults to the built-in Henon experiment)")
    common.add_argument("--out", help="artifact root directory (overrides config 'output')")
    common.add_argument("--seed", type=int, help="override config 'seed'")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: available cores)")
    common.add_argument("--format", choices=("csv", "json"), action="append",
                        help="report format; repeat for several (overrides config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="rcprune", description="Quantize, prune and lower reservoir models to RTL.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="all stages end to end")
    sub.add_parser("gen-data", parents=[common], help="generate or ingest the dataset")
    sub.add_parser("tune", parents=[common], help="random hyperparameter search")
    sub.add_parser("train", parents=[common], help="train the float reservoir")
    q = sub.add_parser("quantize", parents=[common], help="quantize the trained model")
    q.add_argument("--q", type=int, action="append", help="bit-width(s); default: config grid")
    sub.add_parser("sensitivity", parents=[common], help="rank weights with every configured pruner")
    sub.add_parser("prune", parents=[common], help="prune every quantized model at every rate")
    sub.add_parser("dse", parents=[common], help="evaluate every grid cell")
    sub.add_parser("emit-rtl", parents=[common], help="lower configs to Verilog and estimate cost")
    sub.add_parser("report", parents=[common], help="render report tables and figures")
    sub.add_parser("show-config", parents=[common], help="print the resolved configuration")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else validate(dict(DEFAULTS))
    return cfg.with_overrides(seed=args.seed, output=args.out, formats=args.format)


def _progress(cell):
    from .dse import progress_line

    print(progress_line(cell), file=sys.stderr)


def _failed_cells(result):
    return [c for c in result.configs if not c.ok]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    jobs = args.jobs if args.jobs is not None else _default_jobs()
    if jobs < 1:
        print("config error: --jobs: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    from . import pipeline

    try:
        if args.command == "show-config":
            print(cfg.dump(), end="")
            return EXIT_OK
        if args.command == "run":
            result, _ = pipeline.run_all(cfg, jobs, progress=_progress)
            return _finish(result)
        if args.command == "quantize":
            pipeline.stage_quantize(cfg, jobs, qs=args.q)
            return EXIT_OK
        if args.command == "dse":
            return _finish(pipeline.stage_dse(cfg, jobs, progress=_progress))
        if args.command == "report":
            result, rows, written = pipeline.stage_report(cfg, jobs, formats=args.format)
            if not rows:
                print("warning: empty result; wrote header-only report", file=sys.stderr)
                return EXIT_OK
            for path in written:
                log.info("wrote %s", path)
            return _finish(result)
        pipeline.STAGE_FUNCS[args.command](cfg, jobs)
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except RcError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


def _finish(result) -> int:
    failed = _failed_cells(result)
    if not failed:
        return EXIT_OK
    for c in failed:
        print(f"failed: q={c.q} p={c.p:g} pruner={c.pruner}: {c.error}", file=sys.stderr)
    return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
