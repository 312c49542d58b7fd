"""Command-line entry point.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on data errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import load_config
from .errors import ConfigError, DataError, RiskRankError
from .losses import LOSSES
from .riskmeasures import MEASURES

COMMANDS = ("label", "split", "train", "eval", "explain", "ablate")

log = logging.getLogger("riskrank")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _k_grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad k grid {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="riskrank", description="Rank companies by text-predicted financial risk.")
    p.add_argument("--version", action="version", version=f"riskrank {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="flat key = value run configuration")
    p.add_argument("--seed", type=int, help="restrict to one seed instead of the configured list")
    p.add_argument("--measure", choices=MEASURES)
    p.add_argument("--loss", choices=LOSSES)
    p.add_argument("--k-grid", type=_k_grid, help="comma-separated removal fractions, e.g. 0,0.1,0.3")
    p.add_argument("--mode", choices=("words", "sentences"))
    p.add_argument("--doc-id", action="append", default=[], dest="doc_ids", help="heatmap document (repeatable)")
    where = p.add_mutually_exclusive_group()
    where.add_argument("--run-dir", help="use this run directory")
    where.add_argument("--new-run", action="store_true", help="start a fresh run directory")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run_command(args) -> list:
    from . import pipeline

    base = load_config(args.config)
    cfg = base.override(measure=args.measure, loss=args.loss)
    run_dir = pipeline.resolve_run_dir(base, new_run=args.new_run, run_dir=args.run_dir)
    run = pipeline.Run(cfg, run_dir, base=base)
    seeds = (args.seed,) if args.seed is not None else None
    plots = not args.no_plots
    if args.command == "label":
        out = [pipeline.cmd_label(run)]
    elif args.command == "split":
        out = [pipeline.cmd_split(run)]
    elif args.command == "train":
        out = pipeline.cmd_train(run, seeds, plots=plots)
    elif args.command == "eval":
        out = [pipeline.cmd_eval(run, seeds)]
    elif args.command == "explain":
        out = pipeline.cmd_explain(run, seeds, args.doc_ids)
    else:
        out = [pipeline.cmd_ablate(run, seeds, args.mode, args.k_grid, plots=plots)]
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"riskrank: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        for path in run_command(args):
            print(path)
    except ConfigError as exc:
        print(f"riskrank: config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"riskrank: data error: {exc}", file=sys.stderr)
        return 2
    except RiskRankError as exc:
        print(f"riskrank: internal error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
