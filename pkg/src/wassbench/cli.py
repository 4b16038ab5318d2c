"""Command line entry point: ``wassbench <approx|stability|toy-wgan|oracle-check>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .estimators import TrainingDiverged
from .exact_ot import SolverError
from .harness.config import ConfigError, load_config
from .harness.experiments import run
from .harness.report import emit_report
from .tensor import NonFiniteError, ZeroNormError

log = logging.getLogger("wassbench")

COMMANDS = {
    "approx": "approximation",
    "stability": "stability",
    "toy-wgan": "toy-wgan",
    "oracle-check": "oracle-check",
}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _formats(values) -> list[str]:
    out = []
    for v in values or []:
        out += [f.strip() for f in v.split(",") if f.strip()]
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wassbench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, experiment in COMMANDS.items():
        sp = sub.add_parser(name, help=f"run the {experiment} experiment")
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")
        sp.add_argument("--format", action="append", metavar="csv|json|svg",
                        help="output format; repeat or comma-separate (default: csv,json)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set repeats=2")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"out_dir={json.dumps(args.out_dir)}")
    fmts = _formats(args.format)
    if fmts:
        overrides.append(f"formats={json.dumps(fmts)}")
    try:
        cfg = load_config(args.config, COMMANDS[args.command], overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, NonFiniteError, ZeroNormError, SolverError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in emit_report(report, cfg.out_dir, cfg.formats):
        print(path)
    print(json.dumps(report.aggregates, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
