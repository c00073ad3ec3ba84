"""Command-line entry point.

Subcommands map onto pipeline stages::

    simulate   growth panel CSV
    analyze    forecast diagnostics (curves, CG table, QQ tables)
    ingest     external forecast panel -> the same diagnostics
    price      priced panel and the returns predictability curve
    backtest   Sharpe surface and optimal weight schedule
    report     full pipeline plus rendered figures

Every subcommand takes ``--config`` (flat key=value file) and an optional
``--seed`` override.  Exit codes: 0 success, 2 configuration error, 3 data
error, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ExperimentConfig
from .errors import ConfigError, DataError
from .experiment import StageError, run_experiment
from .report import render_figures

log = logging.getLogger(__name__)

STAGE_SETS = {
    "simulate": ("simulate",),
    "analyze": ("analyze",),
    "ingest": ("ingest",),
    "price": ("price",),
    "backtest": ("backtest",),
    "report": ("simulate", "analyze", "price", "backtest"),
}

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="growthlab",
        description="Growth-forecasting laboratory: simulation, diagnostics, pricing, backtests.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_SETS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True, help="path to key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override panel.master_seed")
        p.add_argument("--output", default=None, help="override output.dir")
        if name == "ingest":
            p.add_argument("--input", default=None, help="CSV path (overrides ingest.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = ExperimentConfig.from_file(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.output is not None:
            cfg.output_dir = args.output
        if args.command == "ingest" and args.input is not None:
            cfg.ingest_csv = args.input
        cfg.validate()
        artifacts = run_experiment(cfg, stages=STAGE_SETS[args.command])
        if args.command == "report":
            render_figures(artifacts.out_dir)
        print(f"wrote {len(artifacts.files)} artifacts to {artifacts.out_dir}")
        print(f"manifest {artifacts.manifest_path} sha256 {artifacts.manifest_hash}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        if isinstance(exc.cause, DataError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(exc.cause, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last-resort reporting
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
