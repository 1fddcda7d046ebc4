"""Command line entry point.

    jbfmc trial --config FILE --method M --seed N
    jbfmc sweep --spec FILE --out DIR [--jobs K] [--timing] [--no-plot]
    jbfmc selftest

Exit status: 0 on success, 1 on usage or configuration errors, 2 when every
trial failed numerically (or a self-check failed).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import harness, selftest
from .config import load_config
from .model import ConfigError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

log = logging.getLogger("jbfmc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jbfmc", description="Cascaded channel estimation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("trial", help="run one seeded trial and print its record as CSV")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--method", required=True, choices=sorted(harness.METHODS))
    p.add_argument("--seed", required=True, type=_seed)

    p = sub.add_parser("sweep", help="run a Monte-Carlo sweep, write results.csv and results.svg")
    p.add_argument("--spec", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    p.add_argument("--no-plot", action="store_true")

    sub.add_parser("selftest", help="run the built-in numerical checks")
    return parser


def _cmd_trial(args) -> int:
    config, options = load_config(args.config)
    result = harness.run_trial(config, args.method, args.seed, options)
    writer = csv.DictWriter(sys.stdout, fieldnames=result.CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerow(result.csv_row())
    return EXIT_NUMERICAL if result.failed else EXIT_OK


def _cmd_sweep(args) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    spec = harness.load_sweep_spec(args.spec)

    def progress(done, total):
        if done % 10 == 0 or done == total:
            log.info("trial %d/%d", done, total)

    result = harness.run_sweep(spec, args.jobs, record_timing=args.timing, progress=progress)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {args.out}: {exc}") from exc
    harness.emit_csv(result, args.out / "results.csv")
    if not args.no_plot:
        harness.emit_plot(result, args.out / "results.svg")
    if all(row.fail_rate == 1.0 for row in result.rows):
        log.error("every trial failed")
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_selftest(args) -> int:
    status = EXIT_OK
    for name, ok, detail in selftest.run_all():
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        if not ok:
            status = EXIT_NUMERICAL
    return status


_COMMANDS = {"trial": _cmd_trial, "sweep": _cmd_sweep, "selftest": _cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"jbfmc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # e.g. an empty sweep result handed to the CSV writer
        print(f"jbfmc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"jbfmc: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
