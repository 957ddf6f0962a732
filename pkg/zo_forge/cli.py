"""Command-line front end: train, bench-timing, grid-search, sweep-convergence, report-speedup."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .const import (
    MODE_BENCH_TIMING,
    MODE_GRID_SEARCH,
    MODE_SWEEP_CONVERGENCE,
    MODE_TRAIN,
)
from .core.structs import CheckpointDecodeError
from .engine import SpecError, ZoNumericError
from .models import DatasetError, ModelError
from .report import StepCsvError, report_speedup, write_json
from .runner import GridError, bench_timing, grid_search, run_training, sweep_convergence

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_COMMAND_MODES = {
    "train": MODE_TRAIN,
    "bench-timing": MODE_BENCH_TIMING,
    "grid-search": MODE_GRID_SEARCH,
    "sweep-convergence": MODE_SWEEP_CONVERGENCE,
}

# Errors caused by the config or its values; everything else is a runtime failure.
_USAGE_ERRORS = (ConfigError, ModelError, DatasetError, SpecError, GridError)
_RUNTIME_ERRORS = (OSError, ZoNumericError, CheckpointDecodeError, StepCsvError)


def _add_run_arguments(parser: argparse.ArgumentParser, jobs: bool = False) -> None:
    parser.add_argument("--config", required=True, type=Path, help="Experiment TOML file.")
    parser.add_argument("--seed", type=int, help="Override optimizer.base_seed.")
    parser.add_argument("--output", type=Path, help="Override run.output directory.")
    if jobs:
        parser.add_argument("--jobs", type=int, help="Parallel cells (default: ZO_FORGE_THREADS or cores).")


def _parse_args(argv: list[str] | None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="zo-forge", description="Zeroth-order (MeZO / LeZO) optimization experiments."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    _add_run_arguments(subparsers.add_parser("train", help="Train and write per-step CSV + summary."))
    _add_run_arguments(subparsers.add_parser("bench-timing", help="Dense vs sparse phase timing."))
    _add_run_arguments(subparsers.add_parser("grid-search", help="Grid over lr x mu (x drop_count)."), jobs=True)
    _add_run_arguments(
        subparsers.add_parser("sweep-convergence", help="Steps-to-threshold scaling on quadratics."), jobs=True
    )

    speedup = subparsers.add_parser("report-speedup", help="Compare a dense and a sparse training CSV.")
    speedup.add_argument("--dense", required=True, type=Path, help="Step CSV of the dense (MeZO) run.")
    speedup.add_argument("--sparse", required=True, type=Path, help="Step CSV of the sparse (LeZO) run.")
    speedup.add_argument("--target", required=True, type=float, help="Target eval metric.")
    speedup.add_argument(
        "--lower-is-better", action="store_true", help="Metric is a loss (quadratic tasks)."
    )
    speedup.add_argument("--output", type=Path, help="Write JSON here instead of stdout.")
    return parser.parse_args(argv)


def _run(args: argparse.Namespace) -> None:
    if args.command == "report-speedup":
        result = report_speedup(args.dense, args.sparse, args.target, not args.lower_is_better)
        if args.output is not None:
            write_json(args.output, result)
        else:
            print(json.dumps(result, indent=2, sort_keys=True))
        return

    config = load_config(args.config).with_overrides(
        seed=args.seed, output=args.output, mode=_COMMAND_MODES[args.command]
    )
    if args.command == "train":
        summary = run_training(config)
        print(f"final_metric={summary['final_metric']} output={config.output_path}")
    elif args.command == "bench-timing":
        print(bench_timing(config).format_table(), end="")
    elif args.command == "grid-search":
        outcome = grid_search(config, jobs=args.jobs)
        print(f"best={outcome.best.name if outcome.best else None} output={config.output_path}")
    else:
        trials = sweep_convergence(config, jobs=args.jobs)
        for trial in trials:
            print(f"d={trial.d} keep={trial.keep_fraction} steps={trial.steps_to_threshold:.1f}")


def main(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(
        level=level,
        format="%(asctime)s | %(levelname)-5s | %(message)s",
        datefmt="%H:%M:%S",
    )
    try:
        _run(args)
    except _USAGE_ERRORS as err:
        _LOGGER.error("%s", err)
        return EXIT_USAGE
    except _RUNTIME_ERRORS as err:
        _LOGGER.error("%s", err)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
