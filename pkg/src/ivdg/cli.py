"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from . import __version__
from .config import SEED_ENV_VAR, StudyKind, load_config, resolve_seed
from .errors import ConfigError
from .report import SUMMARY_FILE, format_summary, read_report, summarize, write_report
from .selftest import run_selftest
from .studies import run_study

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D401
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ivdg", description="Instrumental-variable domain generalization studies.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, kind in (("sim-linear", "linear"), ("sim-nonlinear", "non-linear")):
        p = sub.add_parser(name, help=f"run the {kind} simulation study")
        p.add_argument("--config", type=Path, help="YAML/JSON config; missing fields take the defaults")
        p.add_argument("--seed", type=int, help=f"root seed (overrides {SEED_ENV_VAR} and the config)")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--workers", type=int, help="worker processes for independent trials")
        p.add_argument("--no-figures", action="store_true", help="skip rendering figures")

    p = sub.add_parser("report", help="print the summary table of a finished run")
    p.add_argument("--in", dest="in_dir", type=Path, required=True, help="directory written by sim-*")
    p.add_argument("--plot", action="store_true", help="re-render the figure into the directory")

    sub.add_parser("selftest", help="run the built-in invariant checks")
    return parser


def _simulate(args: argparse.Namespace, kind: StudyKind) -> int:
    cfg = load_config(args.config, kind)
    cfg = cfg.with_seed(resolve_seed(args.seed, cfg))
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("must be >= 1", field="workers")
        cfg = dataclasses.replace(cfg, workers=args.workers)
    out = args.out if args.out is not None else Path(cfg.output_dir)
    report = run_study(cfg)
    write_report(report, out, figures=not args.no_figures)
    print(format_summary(report.summary))
    print(f"wrote {out}")
    return EXIT_OK


def _report(args: argparse.Namespace) -> int:
    if not (args.in_dir / "results.csv").exists() and not (args.in_dir / SUMMARY_FILE).exists():
        raise ConfigError(f"{args.in_dir} holds no results.csv", field="--in")
    report = read_report(args.in_dir)
    print(format_summary(summarize(report.rows)))
    if args.plot:
        from .plotting import render_report

        for path in render_report(report, args.in_dir):
            print(f"wrote {path}")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "sim-linear":
            return _simulate(args, StudyKind.LINEAR)
        if args.command == "sim-nonlinear":
            return _simulate(args, StudyKind.NONLINEAR)
        if args.command == "report":
            return _report(args)
        return EXIT_OK if run_selftest() else EXIT_RUNTIME
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
