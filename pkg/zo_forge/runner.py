"""Experiment drivers: training runs, timing benchmark, grid search, convergence sweep."""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .config import ExperimentConfig, worker_count
from .const import (
    CHECKPOINT_NAME,
    GRID_CSV_NAME,
    PRECISION_SINGLE,
    RECOMMENDED_BENCH_DIM,
    STEP_CSV_NAME,
    SUMMARY_JSON_NAME,
    SWEEP_CSV_NAME,
    TIMING_JSON_NAME,
    TIMING_TABLE_NAME,
)
from .core.memory import TracemallocObserver
from .core.params import ParameterVector
from .core.structs import write_checkpoint
from .engine import OptimizerConfig, StepRecord, ZoNumericError, ZoOptimizer
from .models import Batch, Dataset, LossFunction, load_dataset, sample_batch
from .oracle import ConvergenceTrial, convergence_scaling_sweep, scaling_correlation
from .report import PhaseTiming, StepCsvWriter, TimingReport, write_json, write_table_csv

_LOGGER = logging.getLogger(__name__)

GRID_COLUMNS = (
    "learning_rate",
    "mu",
    "drop_count",
    "best_eval_loss",
    "final_eval_metric",
    "steps_completed",
    "diverged",
    "selected",
)
SWEEP_COLUMNS = (
    "d",
    "keep_fraction",
    "active_dim",
    "lr",
    "mu",
    "threshold",
    "mean_steps_to_threshold",
    "std_steps_to_threshold",
    "converged",
)


class GridError(ValueError):
    """Grid has no cells to run."""


@dataclass(frozen=True)
class RunResult:
    seed: int
    steps_completed: int
    final_eval_loss: float
    final_metric: float
    best_eval_loss: float
    best_step: int | None
    wall_time_s: float
    diverged: bool
    output_dir: Path


def _dtype(config: ExperimentConfig) -> type:
    return np.float32 if config.precision == PRECISION_SINGLE else np.float64


def _evaluate(loss: LossFunction, pv: ParameterVector, batch: Batch) -> tuple[float, float]:
    """(eval loss, eval metric); the metric is accuracy for classifiers and loss otherwise."""
    eval_loss = loss(pv, batch)
    metric = loss.accuracy(pv, batch) if loss.classifier else eval_loss
    return eval_loss, metric


def _eval_batch(train: Dataset, held_out: Dataset) -> Batch:
    return (held_out if held_out.size else train).as_batch()


def train_run(config: ExperimentConfig, output_dir: Path, seed: int | None = None) -> RunResult:
    """One training run; writes the step CSV and, if enabled, the best checkpoint."""
    cfg = config.optimizer if seed is None else dataclasses.replace(config.optimizer, base_seed=seed)
    output_dir.mkdir(parents=True, exist_ok=True)
    loss = config.model.build()
    train, held_out = load_dataset(config.data)
    eval_batch = _eval_batch(train, held_out)
    batch_size = min(cfg.batch_size, train.size)

    pv = loss.initial_parameters(_dtype(config))
    observer = TracemallocObserver() if config.track_allocations else None
    optimizer = ZoOptimizer(loss, cfg, observer=observer)
    _LOGGER.info(
        "Training %s (d=%d, N=%d, drop_count=%d) for %d steps, seed %d",
        loss.name, loss.d, loss.num_layers, optimizer.drop_count, cfg.steps, cfg.base_seed,
    )

    best_eval_loss = math.inf
    best_step: int | None = None
    final_eval_loss = math.nan
    final_metric = math.nan
    diverged = False
    steps_completed = 0
    started = time.perf_counter()
    try:
        with StepCsvWriter(output_dir / STEP_CSV_NAME) as writer:
            for t in range(cfg.steps):
                batch = sample_batch(train, batch_size, cfg.base_seed, t)
                try:
                    record = optimizer.step(pv, batch, t)
                except ZoNumericError as err:
                    _LOGGER.warning("Run diverged at step %d: %s", t, err)
                    diverged = True
                    break
                steps_completed = t + 1
                metric = None
                if steps_completed % config.eval_every == 0 or steps_completed == cfg.steps:
                    final_eval_loss, final_metric = _evaluate(loss, pv, eval_batch)
                    metric = final_metric
                    _LOGGER.info(
                        "Step %d: eval loss %.6g, eval metric %.6g", steps_completed, final_eval_loss,
                        final_metric,
                    )
                    if not math.isfinite(final_eval_loss):
                        writer.write(record, metric)
                        _LOGGER.warning("Eval loss is not finite at step %d", steps_completed)
                        diverged = True
                        break
                    if final_eval_loss < best_eval_loss:
                        best_eval_loss, best_step = final_eval_loss, steps_completed
                        if config.checkpoint:
                            write_checkpoint(output_dir / CHECKPOINT_NAME, pv)
                            _LOGGER.debug("Wrote checkpoint at step %d", steps_completed)
                writer.write(record, metric)
    finally:
        if observer is not None:
            observer.close()

    return RunResult(
        seed=cfg.base_seed,
        steps_completed=steps_completed,
        final_eval_loss=final_eval_loss,
        final_metric=final_metric,
        best_eval_loss=best_eval_loss if best_step is not None else math.nan,
        best_step=best_step,
        wall_time_s=time.perf_counter() - started,
        diverged=diverged,
        output_dir=output_dir,
    )


def _json_float(value: float) -> float | None:
    return value if math.isfinite(value) else None


def _result_dict(result: RunResult) -> dict[str, Any]:
    return {
        "seed": result.seed,
        "steps_completed": result.steps_completed,
        "final_metric": _json_float(result.final_metric),
        "final_eval_loss": _json_float(result.final_eval_loss),
        "best_eval_loss": _json_float(result.best_eval_loss),
        "best_step": result.best_step,
        "wall_time_s": result.wall_time_s,
        "diverged": result.diverged,
    }


def run_training(config: ExperimentConfig) -> dict[str, Any]:
    """`repeats` runs with base seeds base_seed + r; writes summary.json."""
    output = config.output_path
    output.mkdir(parents=True, exist_ok=True)
    base = config.optimizer.base_seed
    results = []
    for repeat in range(config.repeats):
        run_dir = output if config.repeats == 1 else output / f"repeat_{repeat}"
        results.append(train_run(config, run_dir, seed=base + repeat))

    metrics = np.array([r.final_metric for r in results])
    loss = config.model.build()
    drop_count = config.optimizer.validate(loss.num_layers)
    summary = {
        **_result_dict(results[0]),
        "seed": base,
        "final_metric_mean": _json_float(float(np.mean(metrics))),
        "final_metric_std": _json_float(float(np.std(metrics))),
        "wall_time_s": sum(r.wall_time_s for r in results),
        "d": loss.d,
        "num_layers": loss.num_layers,
        "drop_count": drop_count,
        "runs": [_result_dict(r) for r in results],
        "config": config.echo(),
    }
    write_json(output / SUMMARY_JSON_NAME, summary)
    _LOGGER.info(
        "Finished %d run(s): final metric %.6g +/- %.3g", config.repeats, np.mean(metrics), np.std(metrics)
    )
    return summary


def _timer_warnings(timings: list[PhaseTiming]) -> list[str]:
    resolution_ns = time.get_clock_info("perf_counter").resolution * 1e9
    warnings = []
    for timing in timings:
        for phase in ("forward", "perturb", "update"):
            median = timing.medians_ns[phase]
            if median < 100 * resolution_ns:
                warnings.append(
                    f"drop_count={timing.drop_count}: {phase} median {median:.0f} ns is within "
                    f"100x of the timer resolution ({resolution_ns:.0f} ns)"
                )
    return warnings


def bench_timing(config: ExperimentConfig) -> TimingReport:
    """Interleaved MeZO / LeZO step timing; writes timing.json and timing.txt."""
    loss = config.model.build()
    train, _ = load_dataset(config.data)
    sparse_count = config.optimizer.validate(loss.num_layers)
    total_steps = config.warmup_steps + config.measure_steps
    drop_counts = sorted({0, sparse_count, *config.bench_drop_counts})

    warnings = []
    if loss.d < RECOMMENDED_BENCH_DIM:
        warnings.append(f"d={loss.d} is below the recommended {RECOMMENDED_BENCH_DIM} for stable timing")
        _LOGGER.warning(warnings[-1])

    runs: dict[int, tuple[ZoOptimizer, ParameterVector, list[StepRecord]]] = {}
    for count in drop_counts:
        cfg = dataclasses.replace(config.optimizer, drop_count=count, drop_fraction=None, steps=total_steps)
        runs[count] = (ZoOptimizer(loss, cfg), loss.initial_parameters(_dtype(config)), [])

    batch_size = min(config.optimizer.batch_size, train.size)
    _LOGGER.info("Timing drop counts %s on d=%d: %d warm-up + %d measured steps",
                 drop_counts, loss.d, config.warmup_steps, config.measure_steps)
    for t in range(total_steps):
        batch = sample_batch(train, batch_size, config.optimizer.base_seed, t)
        for count in drop_counts:
            optimizer, pv, records = runs[count]
            record = optimizer.step(pv, batch, t)
            if t >= config.warmup_steps:
                records.append(record)

    timings = {
        count: PhaseTiming.from_records(count, optimizer.keep_fraction, records)
        for count, (optimizer, _, records) in runs.items()
    }
    warnings.extend(_timer_warnings(list(timings.values())))
    report = TimingReport(
        d=loss.d,
        num_layers=loss.num_layers,
        warmup_steps=config.warmup_steps,
        dense=timings[0],
        sparse=timings[sparse_count],
        drop_sweep=[timings[c] for c in drop_counts if c not in (0, sparse_count)],
        warnings=warnings,
    )
    output = config.output_path
    output.mkdir(parents=True, exist_ok=True)
    write_json(output / TIMING_JSON_NAME, report.to_dict())
    (output / TIMING_TABLE_NAME).write_text(report.format_table(), encoding="utf-8")
    return report


@dataclass(frozen=True, order=True)
class GridCell:
    learning_rate: float
    mu: float
    drop_count: int

    @property
    def name(self) -> str:
        return f"lr={self.learning_rate!r}_mu={self.mu!r}_n={self.drop_count}"


@dataclass(frozen=True)
class GridOutcome:
    cells: list[tuple[GridCell, RunResult]]
    best: GridCell | None

    @property
    def best_result(self) -> RunResult | None:
        for cell, result in self.cells:
            if cell == self.best:
                return result
        return None


def _grid_cells(config: ExperimentConfig) -> list[GridCell]:
    grid = config.grid
    if grid is None:
        learning_rates, mus, drop_counts = [config.optimizer.learning_rate], [config.optimizer.mu], []
    else:
        learning_rates, mus, drop_counts = list(grid.learning_rates), list(grid.mus), list(grid.drop_counts)
    if not drop_counts:
        drop_counts = [config.optimizer.validate(config.model.build().num_layers)]
    if not (learning_rates and mus):
        raise GridError("Grid search needs at least one learning_rate and one mu")
    return sorted(GridCell(lr, mu, n) for lr, mu, n in itertools.product(learning_rates, mus, drop_counts))


def _selection_key(item: tuple[GridCell, RunResult]) -> tuple[float, float, float, int]:
    cell, result = item
    return (result.best_eval_loss, cell.learning_rate, cell.mu, cell.drop_count)


def grid_search(config: ExperimentConfig, jobs: int | None = None) -> GridOutcome:
    """Run every (lr, mu, drop_count) cell; lowest eval loss wins, ties to smaller values."""
    cells = _grid_cells(config)
    root = config.output_path
    root.mkdir(parents=True, exist_ok=True)

    def run_cell(cell: GridCell) -> RunResult:
        cell_config = dataclasses.replace(
            config,
            optimizer=dataclasses.replace(
                config.optimizer, learning_rate=cell.learning_rate, mu=cell.mu,
                drop_count=cell.drop_count, drop_fraction=None,
            ),
            # tracemalloc peaks are process-wide; concurrent cells would mix them.
            track_allocations=False,
        )
        return train_run(cell_config, root / "cells" / cell.name)

    with ThreadPoolExecutor(max_workers=worker_count(jobs)) as pool:
        futures = {cell: pool.submit(run_cell, cell) for cell in cells}
        results = [(cell, futures[cell].result()) for cell in cells]

    finite = [item for item in results if not item[1].diverged and math.isfinite(item[1].best_eval_loss)]
    for cell, result in results:
        if result.diverged:
            _LOGGER.warning("Grid cell %s diverged after %d steps", cell.name, result.steps_completed)
    best = min(finite, key=_selection_key)[0] if finite else None
    if best is None:
        _LOGGER.error("Every grid cell diverged")

    write_table_csv(
        root / GRID_CSV_NAME,
        GRID_COLUMNS,
        (
            (
                cell.learning_rate, cell.mu, cell.drop_count, result.best_eval_loss,
                result.final_metric, result.steps_completed, int(result.diverged), int(cell == best),
            )
            for cell, result in results
        ),
    )
    write_json(
        root / SUMMARY_JSON_NAME,
        {
            "best": dataclasses.asdict(best) if best is not None else None,
            "cells": [{**dataclasses.asdict(cell), **_result_dict(result)} for cell, result in results],
            "config": config.echo(),
        },
    )
    if best is not None:
        _LOGGER.info("Best grid cell: %s", best.name)
    return GridOutcome(cells=results, best=best)


def _spearman_by_keep(trials: list[ConvergenceTrial]) -> dict[str, float | None]:
    """Rank correlation of d against mean steps, one value per keep fraction."""
    by_keep: dict[float, list[ConvergenceTrial]] = {}
    for trial in trials:
        by_keep.setdefault(trial.keep_fraction, []).append(trial)
    return {
        repr(keep): _json_float(scaling_correlation(group)) if len({t.d for t in group}) > 1 else None
        for keep, group in sorted(by_keep.items())
    }


def sweep_convergence(config: ExperimentConfig, jobs: int | None = None) -> list[ConvergenceTrial]:
    """Steps-to-threshold over the [sweep] grid; writes sweep.csv and summary.json."""
    sweep = config.sweep
    trials = convergence_scaling_sweep(
        sweep.d_list,
        sweep.keep_fractions,
        sweep.threshold,
        config.repeats,
        config.optimizer.base_seed,
        layers=sweep.layers,
        max_steps=sweep.max_steps,
        mu=config.optimizer.mu,
        jobs=worker_count(jobs),
    )
    root = config.output_path
    root.mkdir(parents=True, exist_ok=True)
    write_table_csv(
        root / SWEEP_CSV_NAME,
        SWEEP_COLUMNS,
        (
            (
                trial.d, trial.keep_fraction, trial.active_dim, trial.lr, trial.mu, trial.threshold,
                trial.steps_to_threshold, float(np.std(trial.runs)), int(trial.converged),
            )
            for trial in trials
        ),
    )
    summary: dict[str, Any] = {
        "trials": [dataclasses.asdict(trial) for trial in trials],
        "spearman_d_vs_steps_by_keep": _spearman_by_keep(trials),
        "config": config.echo(),
    }
    write_json(root / SUMMARY_JSON_NAME, summary)
    return trials
