"""Tests for CSV/JSON writers, timing reports and speedup comparison."""

from __future__ import annotations

import json

import pytest

from zo_forge.const import STEP_CSV_COLUMNS
from zo_forge.engine import StepRecord
from zo_forge.report import (
    PhaseTiming,
    StepCsvError,
    StepCsvWriter,
    TimingReport,
    format_float,
    read_step_csv,
    report_speedup,
    steps_to_target,
    write_json,
    write_table_csv,
)


def _record(step: int, forward: int = 100, perturb: int = 40, update: int = 20, total: int = 200) -> StepRecord:
    return StepRecord(
        step=step, loss_plus=1.5, loss_minus=0.5, projected_grad=500.0,
        time_forward_ns=forward, time_perturb_ns=perturb, time_update_ns=update, time_total_ns=total,
    )


def _write_run(path, metrics: dict[int, float], forward: int) -> None:
    with StepCsvWriter(path) as writer:
        for step in range(10):
            writer.write(_record(step, forward=forward, perturb=0, update=0), metrics.get(step))


def test_format_float():
    assert format_float(0.1) == "0.1"
    assert format_float(None) == ""
    assert float(format_float(1 / 3)) == 1 / 3


def test_step_csv_layout(tmp_path):
    path = tmp_path / "steps.csv"
    with StepCsvWriter(path) as writer:
        writer.write(_record(0))
        writer.write(_record(1), 0.75)
        assert writer.rows == 2
    rows = read_step_csv(path)
    assert path.read_text(encoding="utf-8").splitlines()[0] == ",".join(STEP_CSV_COLUMNS)
    assert rows[0]["eval_metric"] == ""
    assert rows[1]["eval_metric"] == "0.75"
    assert float(rows[1]["projected_grad"]) == 500.0


def test_read_step_csv_checks_header(tmp_path):
    path = tmp_path / "other.csv"
    write_table_csv(path, ("a", "b"), [(1, 2.5)])
    with pytest.raises(StepCsvError, match="header"):
        read_step_csv(path)
    assert path.read_text(encoding="utf-8").splitlines() == ["a,b", "1,2.5"]


def test_write_json_is_sorted(tmp_path):
    path = tmp_path / "out.json"
    write_json(path, {"b": 1, "a": None})
    text = path.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": None, "b": 1}


def test_phase_timing():
    timing = PhaseTiming.from_records(2, 0.5, [_record(0), _record(1, forward=300, total=400), _record(2)])
    assert timing.steps == 3
    assert timing.totals_ns == {"forward": 500, "perturb": 120, "update": 60, "other": 120}
    assert timing.medians_ns["forward"] == 100.0
    assert timing.medians_ns["step"] == 200.0
    assert sum(timing.fractions.values()) == pytest.approx(1.0)
    assert timing.fractions["forward"] == pytest.approx(500 / 800)


def test_timing_report_ratios_and_table():
    dense = PhaseTiming.from_records(0, 1.0, [_record(0, forward=100, perturb=80, update=40, total=300)])
    sparse = PhaseTiming.from_records(3, 0.25, [_record(0, forward=100, perturb=20, update=0, total=150)])
    report = TimingReport(d=1000, num_layers=4, warmup_steps=1, dense=dense, sparse=sparse, warnings=["small"])
    ratios = report.ratios
    assert ratios["perturb_sparse/perturb_dense"] == pytest.approx(0.25)
    assert ratios["step_sparse/step_dense"] == pytest.approx(0.5)
    assert ratios["update_sparse/update_dense"] == 0.0
    table = report.format_table()
    assert "warning: small" in table
    assert table.count("\n") == 2 + 2 + 4 + 1
    payload = report.to_dict()
    assert payload["drop_count"] == 3
    assert payload["steps_measured"] == 1
    json.dumps(payload)


def test_ratio_with_zero_denominator():
    zero = PhaseTiming.from_records(0, 1.0, [_record(0, update=0)])
    sparse = PhaseTiming.from_records(1, 0.5, [_record(0)])
    report = TimingReport(d=10, num_layers=2, warmup_steps=0, dense=zero, sparse=sparse)
    assert report.ratios["update_sparse/update_dense"] is None
    assert "n/a" in report.format_table()


def test_steps_to_target():
    rows = [
        {"step": "0", "eval_metric": ""},
        {"step": "4", "eval_metric": "0.6"},
        {"step": "9", "eval_metric": "0.9"},
    ]
    assert steps_to_target(rows, 0.85) == 10
    assert steps_to_target(rows, 0.95) is None
    assert steps_to_target(rows, 0.7, higher_is_better=False) == 5


def test_report_speedup(tmp_path):
    dense, sparse = tmp_path / "dense.csv", tmp_path / "sparse.csv"
    _write_run(dense, {4: 0.5, 9: 0.9}, forward=200)
    _write_run(sparse, {4: 0.92, 9: 0.95}, forward=100)
    result = report_speedup(dense, sparse, 0.9)
    assert result["compute_speedup"] == pytest.approx(2.0)
    assert result["dense_steps_to_target"] == 10
    assert result["sparse_steps_to_target"] == 5
    assert result["convergence_speedup"] == pytest.approx(2.0)
    assert result["wall_clock_speedup"] == pytest.approx(4.0)


def test_report_speedup_against_itself(tmp_path):
    run = tmp_path / "run.csv"
    _write_run(run, {4: 0.5, 9: 0.8}, forward=150)
    same = report_speedup(run, run, 0.8)
    assert same["compute_speedup"] == 1.0
    assert same["convergence_speedup"] == 1.0
    never = report_speedup(run, run, 0.99)
    assert never["compute_speedup"] == 1.0
    assert never["convergence_speedup"] is None
    assert never["wall_clock_speedup"] is None
    assert never["dense_steps_to_target"] is None


def test_malformed_cells_raise_step_csv_error(tmp_path):
    run = tmp_path / "run.csv"
    _write_run(run, {4: 0.5}, forward=150)
    text = run.read_text(encoding="utf-8").replace("\n4,1.5,", "\nfour,1.5,")
    run.write_text(text, encoding="utf-8")
    with pytest.raises(StepCsvError, match="bad step"):
        report_speedup(run, run, 0.4)

    rows = [{"step": "0", "eval_metric": "high"}]
    with pytest.raises(StepCsvError, match="bad eval_metric"):
        steps_to_target(rows, 0.5)
