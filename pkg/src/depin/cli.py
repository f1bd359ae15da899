"""Command-line entry point: ``depin <command> [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from . import __version__
from .depinning import BracketError
from .harness import COMMANDS, ConfigError, parse_config, run_experiment

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4

# flag dest -> config key
FLAG_KEYS = {
    "seed": "seed",
    "rho": "rho",
    "out": "out",
    "workers": "workers",
    "t_max": "sim.t_max",
    "tol_f": "bisection.tol_F",
    "force": "simulate.force",
    "snapshot_stride": "simulate.snapshot_stride",
    "n_seeds": "sweep.n_seeds",
    "densities": "sweep.densities",
    "tau": "kinetics.tau",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depin", description="Depinning experiments for fronts in random obstacle fields.")
    p.add_argument("--version", action="version", version=f"depin {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--rho", type=float, help="obstacle density")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--t-max", type=float, dest="t_max", help="time cap per probe")
    common.add_argument("--tol-f", type=float, dest="tol_f", help="bisection tolerance on F")
    common.add_argument("--tau", type=float, help="threshold friction tau")
    common.add_argument("--force", type=float, help="driving force for `simulate`")
    common.add_argument("--snapshot-stride", type=int, dest="snapshot_stride",
                        help="write a trajectory frame every N steps (0: off)")
    common.add_argument("--n-seeds", type=int, dest="n_seeds", help="seeds per density")
    common.add_argument("--densities", type=lambda s: [float(x) for x in s.split(",")],
                        help="comma-separated densities for `scaling`")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "field-gen": "sample an obstacle field and write it as JSON lines",
        "simulate": "evolve a flat front at fixed force",
        "critical": "bisect for the critical force of one realisation",
        "scaling": "critical forces over densities and seeds, with the power-law fit",
        "certify-lower": "build the best pinning barrier",
        "certify-upper": "find an open path and build its propagating subsolution",
        "sandwich": "compare certified bounds with the simulated critical force",
        "report": "summary and plot data from a finished `scaling` run",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {key: getattr(args, dest) for dest, key in FLAG_KEYS.items()}
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"depin: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = run_experiment(args.command, cfg)
    except ConfigError as exc:
        print(f"depin: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BracketError, ValueError, OSError, FloatingPointError) as exc:
        print(f"depin: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
