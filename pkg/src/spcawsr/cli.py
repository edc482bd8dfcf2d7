"""Command line: ``spcawsr {sweep,convergence,ber,selftest}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import ConfigError, config_from_mapping, parse_config_text, run_experiment
from .selftest import run_selftest

log = logging.getLogger("spcawsr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spcawsr", description="Multicell OFDM weighted sum-rate beamforming experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("sweep", "average WSR vs per-BS power"),
                        ("convergence", "per-iteration objective traces"),
                        ("ber", "bit error rate vs CSI error variance")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="flat KEY = value file")
        sp.add_argument("--seed", type=int, help="master seed (overrides SEED)")
        sp.add_argument("--out", default=".", help="output directory for the CSV files")
        sp.add_argument("--trials", type=int, help="Monte-Carlo trials (overrides TRIALS)")
        sp.add_argument("--workers", type=int, help="parallel worker processes (overrides WORKERS)")
    sub.add_parser("selftest", help="oracle-equivalence and invariant checks")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"spcawsr: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return 0 if run_selftest() else 1

    try:
        values = parse_config_text(Path(args.config).read_text())
        values.setdefault("EXPERIMENT", args.command)
        cfg = config_from_mapping(values, seed=args.seed, trials=args.trials, out_dir=args.out,
                                  workers=args.workers)
    except OSError as exc:
        parser.print_usage(sys.stderr)
        print(f"spcawsr: error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"spcawsr: error: {exc}", file=sys.stderr)
        return 2
    if cfg.kind != args.command:
        parser.print_usage(sys.stderr)
        print(f"spcawsr: error: config says EXPERIMENT = {cfg.kind}, command is {args.command}", file=sys.stderr)
        return 2
    try:
        res = run_experiment(cfg)
    except Exception as exc:
        log.error("experiment failed: %s", exc)
        return 1
    if res.failed_trials:
        log.warning("%d trial runs failed and were excluded from the averages", res.failed_trials)
    return 0


if __name__ == "__main__":
    sys.exit(main())
