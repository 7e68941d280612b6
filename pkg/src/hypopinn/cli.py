"""Command line entry point: ``hypopinn <subcommand> --config PATH``.

Exit status 0 on success, 1 for configuration errors, 2 for numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiment import (NumericalFailure, run_experiment, run_forward, run_init_study,
                         run_laplace, run_train)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

SUBCOMMANDS = ("forward", "train", "init-study", "laplace", "experiment")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypopinn", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, type=Path, help="experiment config file")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: runs/<name>)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--stage-in", type=Path, default=None,
                   help="directory of an earlier stage to reuse observations / MAP weights from")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _print_results(results) -> None:
    for res in results:
        s = res.summary
        line = (f"{res.directory.name}: MAP ({s['map_location'][0]:.3f}, {s['map_location'][1]:.3f}) km"
                f"  error {s['location_error_km']['euclidean']:.3f} km")
        if s.get("cloud_std") is not None:
            line += f"  cloud std ({s['cloud_std'][0]:.3f}, {s['cloud_std'][1]:.3f}) km"
        print(line)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path("runs") / cfg.name
    if args.stage_in is not None and not args.stage_in.is_dir():
        print(f"config error: stage input {args.stage_in} is not a directory", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.subcommand == "forward":
            run_forward(cfg, out)
        elif args.subcommand == "train":
            _print_results(run_train(cfg, out, args.stage_in))
        elif args.subcommand == "laplace":
            _print_results(run_laplace(cfg, out, args.stage_in))
        elif args.subcommand == "experiment":
            _print_results(run_experiment(cfg, out, args.stage_in))
        else:
            for row in run_init_study(cfg, out, stage_in=args.stage_in):
                print(f"{row['scheme']:16s} total {row['total']:.3e}  error {row['location_error_km']:.3f} km")
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"artifacts in {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
