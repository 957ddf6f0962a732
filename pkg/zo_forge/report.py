"""Step CSVs, JSON summaries, timing reports and speedup comparison."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .const import STEP_CSV_COLUMNS
from .engine import StepRecord

_LOGGER = logging.getLogger(__name__)

PHASES = ("forward", "perturb", "update", "other")


def format_float(value: float | None) -> str:
    """Shortest round-trip text for a float; empty for None."""
    if value is None:
        return ""
    return repr(float(value))


class StepCsvWriter:
    """Per-step CSV with the fixed column set, one row per optimizer step."""

    def __init__(self, path: Path) -> None:
        self.path = Path(path)
        self._handle = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._handle)
        self._writer.writerow(STEP_CSV_COLUMNS)
        self.rows = 0

    def write(self, record: StepRecord, eval_metric: float | None = None) -> None:
        self._writer.writerow(
            (
                record.step,
                format_float(record.loss_plus),
                format_float(record.loss_minus),
                format_float(record.projected_grad),
                format_float(eval_metric),
                record.time_forward_ns,
                record.time_perturb_ns,
                record.time_update_ns,
                record.alloc_delta_bytes,
            )
        )
        self.rows += 1

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "StepCsvWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


class StepCsvError(ValueError):
    """A step CSV has the wrong header or an unparsable cell."""


def read_step_csv(path: Path) -> list[dict[str, str]]:
    try:
        with Path(path).open(newline="", encoding="utf-8") as handle:
            reader = csv.DictReader(handle)
            if tuple(reader.fieldnames or ()) != STEP_CSV_COLUMNS:
                raise StepCsvError(f"{path} does not have the step CSV header {STEP_CSV_COLUMNS}")
            return list(reader)
    except UnicodeDecodeError as err:
        raise StepCsvError(f"{path} is not valid UTF-8: {err}") from err


def write_json(path: Path, payload: Any) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_table_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])


@dataclass(frozen=True)
class PhaseTiming:
    """Measured phase times for one drop count."""

    drop_count: int
    keep_fraction: float
    steps: int
    totals_ns: dict[str, int]
    medians_ns: dict[str, float]

    @classmethod
    def from_records(cls, drop_count: int, keep_fraction: float, records: Sequence[StepRecord]) -> "PhaseTiming":
        forward = np.array([r.time_forward_ns for r in records], dtype=np.int64)
        perturb = np.array([r.time_perturb_ns for r in records], dtype=np.int64)
        update = np.array([r.time_update_ns for r in records], dtype=np.int64)
        other = np.array([r.time_other_ns for r in records], dtype=np.int64)
        total = np.array([r.time_total_ns for r in records], dtype=np.int64)
        return cls(
            drop_count=drop_count,
            keep_fraction=keep_fraction,
            steps=len(records),
            totals_ns={
                "forward": int(forward.sum()),
                "perturb": int(perturb.sum()),
                "update": int(update.sum()),
                "other": int(other.sum()),
            },
            medians_ns={
                "forward": float(np.median(forward)),
                "perturb": float(np.median(perturb)),
                "update": float(np.median(update)),
                "step": float(np.median(total)),
            },
        )

    @property
    def fractions(self) -> dict[str, float]:
        total = sum(self.totals_ns.values())
        if total == 0:
            return {phase: 0.0 for phase in PHASES}
        return {phase: self.totals_ns[phase] / total for phase in PHASES}


def _ratio(numerator: float, denominator: float) -> float | None:
    return numerator / denominator if denominator > 0 else None


@dataclass
class TimingReport:
    d: int
    num_layers: int
    warmup_steps: int
    dense: PhaseTiming
    sparse: PhaseTiming
    drop_sweep: list[PhaseTiming] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def steps_measured(self) -> int:
        return self.sparse.steps

    @property
    def drop_count(self) -> int:
        return self.sparse.drop_count

    @property
    def ratios(self) -> dict[str, float | None]:
        """Sparse median over dense median, per phase and for the whole step."""
        return {
            f"{phase}_sparse/{phase}_dense": _ratio(self.sparse.medians_ns[phase], self.dense.medians_ns[phase])
            for phase in ("forward", "perturb", "update", "step")
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "d": self.d,
            "num_layers": self.num_layers,
            "drop_count": self.drop_count,
            "steps_measured": self.steps_measured,
            "warmup_steps": self.warmup_steps,
            "dense": {**asdict(self.dense), "fractions": self.dense.fractions},
            "sparse": {**asdict(self.sparse), "fractions": self.sparse.fractions},
            "drop_sweep": [{**asdict(t), "fractions": t.fractions} for t in self.drop_sweep],
            "ratios": self.ratios,
            "warnings": list(self.warnings),
        }

    def format_table(self) -> str:
        lines = [
            f"d={self.d} layers={self.num_layers} steps={self.steps_measured} warmup={self.warmup_steps}",
            f"{'drop':>5} {'keep':>6} {'forward_ms':>11} {'perturb_ms':>11} {'update_ms':>10} {'step_ms':>9}"
            f" {'fwd%':>6} {'pert%':>6} {'upd%':>6} {'other%':>7}",
        ]
        for timing in (self.dense, self.sparse, *self.drop_sweep):
            med = timing.medians_ns
            frac = timing.fractions
            lines.append(
                f"{timing.drop_count:>5} {timing.keep_fraction:>6.3f} {med['forward'] / 1e6:>11.3f}"
                f" {med['perturb'] / 1e6:>11.3f} {med['update'] / 1e6:>10.3f} {med['step'] / 1e6:>9.3f}"
                f" {100 * frac['forward']:>6.1f} {100 * frac['perturb']:>6.1f} {100 * frac['update']:>6.1f}"
                f" {100 * frac['other']:>7.1f}"
            )
        for name, value in self.ratios.items():
            lines.append(f"{name}: {'n/a' if value is None else f'{value:.3f}'}")
        lines.extend(f"warning: {warning}" for warning in self.warnings)
        return "\n".join(lines) + "\n"


def _cell(row: dict[str, str], column: str, parse: Callable[[str], Any]) -> Any:
    try:
        return parse(row[column])
    except (TypeError, ValueError) as err:
        raise StepCsvError(f"Step {row.get('step')!r}: bad {column} value {row.get(column)!r}") from err


def _median_step_ns(rows: Sequence[dict[str, str]]) -> float:
    totals = [
        sum(_cell(row, column, int) for column in ("time_forward_ns", "time_perturb_ns", "time_update_ns"))
        for row in rows
    ]
    return float(np.median(totals)) if totals else 0.0


def steps_to_target(rows: Sequence[dict[str, str]], target: float, higher_is_better: bool = True) -> int | None:
    """Steps completed when the eval metric first meets `target`; None if never."""
    for row in rows:
        if not row["eval_metric"]:
            continue
        metric = _cell(row, "eval_metric", float)
        if not math.isfinite(metric):
            continue
        if (metric >= target) if higher_is_better else (metric <= target):
            return _cell(row, "step", int) + 1
    return None


def report_speedup(
    dense_csv: Path, sparse_csv: Path, target: float, higher_is_better: bool = True
) -> dict[str, float | int | None]:
    """Compute and convergence speedup of a sparse run over a dense run.

    Undefined quantities (target never reached, zero step time) are None.
    """
    dense_rows = read_step_csv(dense_csv)
    sparse_rows = read_step_csv(sparse_csv)
    compute = _ratio(_median_step_ns(dense_rows), _median_step_ns(sparse_rows))
    dense_steps = steps_to_target(dense_rows, target, higher_is_better)
    sparse_steps = steps_to_target(sparse_rows, target, higher_is_better)
    convergence = None
    if dense_steps is not None and sparse_steps is not None:
        convergence = dense_steps / sparse_steps
    else:
        _LOGGER.info("Target %s not reached by both runs; convergence speedup undefined", target)
    wall_clock = compute * convergence if compute is not None and convergence is not None else None
    return {
        "compute_speedup": compute,
        "convergence_speedup": convergence,
        "wall_clock_speedup": wall_clock,
        "dense_steps_to_target": dense_steps,
        "sparse_steps_to_target": sparse_steps,
        "target": target,
    }
