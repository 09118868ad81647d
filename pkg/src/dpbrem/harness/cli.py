"""Command-line entry point: run, sweep, accountant, verify."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .experiment import jsonable, privacy_report, run_experiment
from .sweep import DEFAULT_MAX_POINTS, GridError, sweep
from .verify import SUITES, verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpbrem", description="Private, Byzantine-robust federated learning simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: output.dir)")

    sw = sub.add_parser("sweep", help="run a Cartesian grid of experiments")
    sw.add_argument("config")
    sw.add_argument("--grid", required=True, help="e.g. 'rule.R=[2,1]|[5,2];seed=1,2'")
    sw.add_argument("--out", help="output directory (default: output.dir)")
    sw.add_argument("--max-points", type=int, default=DEFAULT_MAX_POINTS)
    sw.add_argument("--workers", type=int, default=1)

    acc = sub.add_parser("accountant", help="report sigma and epsilon without training")
    acc.add_argument("config")

    ver = sub.add_parser("verify", help="run brute-force verification suites")
    ver.add_argument("suite", choices=["all", *SUITES])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "verify":
            checks = verify(args.suite)
            for c in checks:
                print(c.line())
            failed = sum(not c.passed for c in checks)
            print(f"{len(checks) - failed} passed, {failed} failed")
            return 1 if failed else 0
        cfg = load_config(args.config)
        if args.command == "run":
            result = run_experiment(cfg, args.out)
            print(json.dumps(jsonable(result.summary), sort_keys=True))
        elif args.command == "sweep":
            index = sweep(cfg, args.grid, args.out, args.max_points, args.workers)
            print(index)
        else:
            print(json.dumps(jsonable(privacy_report(cfg)), indent=2, sort_keys=True))
    except ConfigError as exc:
        for path, message in exc.problems:
            print(f"config error: {path}: {message}", file=sys.stderr)
        return 2
    except (GridError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
