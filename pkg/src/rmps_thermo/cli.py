"""Command-line entry point: ``rmps-thermo <experiment> --config PATH``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import InvalidArgumentError, NumericalFailureError, ResourceLimitError
from .estimator import default_workers
from .experiments import EXPERIMENTS, load_config, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("rmps_thermo")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmps-thermo", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master_seed")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: available cores)")
        p.add_argument("--out", default="results", help="output root directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.experiment).with_seed(args.seed)
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise InvalidArgumentError("--workers must be >= 1")
    except (InvalidArgumentError, ResourceLimitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_dir = run_experiment(cfg, args.out, workers)
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidArgumentError, ResourceLimitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(run_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
