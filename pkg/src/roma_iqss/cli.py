"""Command line entry point: simulate, summarize, solve, validate.

Exit codes: 0 success, 2 configuration or input error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .game import InvalidInputError, load_game
from .harness import ConfigError, SchemaError, load_config, run_experiment, summarize
from .oracle import OracleSizeError, dump_solution, enumerate_optimal_joint_policies, joint_value_iteration

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("roma_iqss")


def _simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.runs is not None:
        cfg.num_runs = args.runs
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    cfg.validate()
    path = run_experiment(cfg)
    print(path)
    return EXIT_OK


def _summarize(args: argparse.Namespace) -> int:
    root = Path(args.input)
    files = sorted(root.glob("**/metrics.csv"))
    if not files:
        raise InvalidInputError(f"no metrics.csv under {root}")
    summaries = summarize(files, root, plot=args.plot)
    print("method,runs,final_mean,final_std,alignment_rate,optimum_rate")
    for sm in summaries:
        print(
            f"{sm.method},{sm.runs},{sm.final_mean:.6g},{sm.final_std:.6g},"
            f"{sm.alignment_rate:.6g},{sm.optimum_rate:.6g}"
        )
    return EXIT_OK


def _solve(args: argparse.Namespace) -> int:
    game = load_game(args.game)
    solution = joint_value_iteration(game, args.gamma)
    try:
        enumerate_optimal_joint_policies(game, solution)
    except OracleSizeError as exc:
        log.warning("optimal policies not listed: %s", exc)
    dump_solution(game, solution, sys.stdout)
    return EXIT_OK


def _validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    cfg.validate()
    print(f"ok: {cfg.method} on {cfg.game}, t_max={cfg.t_max}, runs={cfg.num_runs}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roma-iqss", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run every seed of an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int, help="base seed; run r uses seed + r")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=_simulate)

    p = sub.add_parser("summarize", help="mean/std curves and alignment rates for metrics under a directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--plot", action="store_true", help="also write returns.png")
    p.set_defaults(func=_summarize)

    p = sub.add_parser("solve", help="dump the oracle solution of a game file")
    p.add_argument("--game", required=True)
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(func=_solve)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidInputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, OracleSizeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
