"""Command-line entry point: ``framelab {policy-grid,redundancy,train}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import (ConfigError, config_from_dict, load_config,
                    run_policy_grid, run_redundancy_study, run_sampler_experiment)
from .core import CapacityError, InvalidArgumentError
from .sampler import TrainingDivergedError

EXIT_OK = 0
EXIT_INVALID_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framelab", description="Frame-sampling experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("policy-grid", "compare sampling policies over (N, T) cells"),
                            ("redundancy", "consecutive-frame relevance versus smoothness"),
                            ("train", "train and evaluate the learned sampler")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config (defaults used if omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes (policy-grid)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be an unsigned integer")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        config = load_config(args.config, args.seed) if args.config else config_from_dict({}, args.seed)
    except (ConfigError, OSError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG

    try:
        if args.command == "policy-grid":
            run_policy_grid(config, args.out, workers=args.workers)
        elif args.command == "redundancy":
            run_redundancy_study(config, args.out)
        else:
            run_sampler_experiment(config, args.out)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID_CONFIG
    except (OSError, TrainingDivergedError, CapacityError, InvalidArgumentError, RuntimeError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
