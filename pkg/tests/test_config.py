"""Tests for config loading and validation."""

from __future__ import annotations

from pathlib import Path

import pytest

from zo_forge.config import ConfigError, load_config, parse_config, worker_count
from zo_forge.const import DEFAULT_EVAL_FRACTION, DEFAULT_OUTPUT, ENV_THREADS

QUADRATIC = """
[model]
kind = "quadratic"
d = 16
layers = 4

[optimizer]
learning_rate = 0.01
steps = 50
drop_count = 2
"""


def test_minimal_quadratic(write_config):
    config = load_config(write_config(QUADRATIC))
    assert config.model.kind == "quadratic"
    assert config.optimizer.learning_rate == 0.01
    assert config.optimizer.drop_count == 2
    assert config.eval_every == 5
    assert config.repeats == 1
    assert config.output_path == Path(DEFAULT_OUTPUT)
    assert config.data.kind == "synthetic_quadratic"
    assert config.data.eval_fraction == DEFAULT_EVAL_FRACTION
    assert config.grid is None
    assert config.model.build().d == 16


def test_unknown_key_is_named(write_config):
    text = QUADRATIC.replace("learning_rate", "learning_rat")
    with pytest.raises(ConfigError, match="learning_rat") as caught:
        load_config(write_config(text))
    assert caught.value.key == "optimizer.learning_rat"


def test_unknown_section(write_config):
    with pytest.raises(ConfigError) as caught:
        load_config(write_config(QUADRATIC + "\n[extras]\nx = 1\n"))
    assert caught.value.key == "extras"


@pytest.mark.parametrize(
    "replace,key",
    [
        (("steps = 50", "steps = 0"), "optimizer.steps"),
        (("learning_rate = 0.01", "learning_rate = -1.0"), "optimizer.learning_rate"),
        (('kind = "quadratic"', 'kind = "resnet"'), "model.kind"),
    ],
)
def test_out_of_range_values(write_config, replace, key):
    with pytest.raises(ConfigError) as caught:
        load_config(write_config(QUADRATIC.replace(*replace)))
    assert caught.value.key == key


def test_missing_model_key(write_config):
    with pytest.raises(ConfigError, match="model.d") as caught:
        load_config(write_config(QUADRATIC.replace("d = 16\n", "")))
    assert caught.value.key == "model.d"


def test_drop_count_and_fraction_are_exclusive(write_config):
    text = QUADRATIC.replace("drop_count = 2", "drop_count = 2\ndrop_fraction = 0.5")
    with pytest.raises(ConfigError, match="not both"):
        load_config(write_config(text))


def test_drop_fraction(write_config):
    config = load_config(write_config(QUADRATIC.replace("drop_count = 2", "drop_fraction = 0.75")))
    assert config.optimizer.validate(4) == 3


def test_malformed_toml(write_config):
    with pytest.raises(ConfigError, match="Cannot parse"):
        load_config(write_config("[model\nkind="))


def test_missing_file_raises_os_error(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.toml")


def test_transformer_blobs_follow_sequence_length():
    config = parse_config(
        {
            "model": {"kind": "transformer", "vocab": 16, "seq_len": 6, "dim": 8, "blocks": 2, "num_classes": 2},
            "data": {"num_samples": 40},
        }
    )
    assert config.data.kind == "synthetic_gaussian_blobs"
    assert config.data.feature_dim == 6
    assert config.data.vocab == 16
    with pytest.raises(ConfigError) as caught:
        parse_config(
            {
                "model": {
                    "kind": "transformer", "vocab": 16, "seq_len": 6, "dim": 8, "blocks": 2,
                    "num_classes": 2, "feature_dim": 4,
                },
            }
        )
    assert caught.value.key == "model.seq_len"


def test_classifier_rejects_quadratic_data():
    with pytest.raises(ConfigError) as caught:
        parse_config(
            {
                "model": {"kind": "logistic", "feature_dim": 4, "num_classes": 2},
                "data": {"kind": "synthetic_quadratic"},
            }
        )
    assert caught.value.key == "data.kind"


def test_csv_needs_path():
    with pytest.raises(ConfigError, match="data.path"):
        parse_config(
            {
                "model": {"kind": "logistic", "feature_dim": 4, "num_classes": 2},
                "data": {"kind": "csv_classification"},
            }
        )


def test_grid_and_sweep_sections():
    config = parse_config(
        {
            "model": {"kind": "quadratic", "d": 8, "layers": 2},
            "grid": {"learning_rate": [0.1, 0.01]},
            "sweep": {"d_list": [16, 32], "keep_fractions": [1.0]},
        }
    )
    assert config.grid.learning_rates == (0.1, 0.01)
    assert config.grid.mus == (config.optimizer.mu,)
    assert config.grid.drop_counts == ()
    assert config.sweep.d_list == (16, 32)
    assert config.sweep.keep_fractions == (1.0,)


def test_overrides():
    config = parse_config({"model": {"kind": "quadratic", "d": 8}})
    changed = config.with_overrides(seed=99, output="elsewhere", mode="bench_timing")
    assert changed.optimizer.base_seed == 99
    assert changed.output_path == Path("elsewhere")
    assert changed.mode == "bench_timing"
    assert config.optimizer.base_seed == 0
    with pytest.raises(ConfigError):
        config.with_overrides(seed=-1)


def test_echo_is_plain_data():
    echo = parse_config({"model": {"kind": "quadratic", "d": 8}}).echo()
    assert echo["model"]["d"] == 8
    assert echo["optimizer"]["precision"] == "double"
    assert echo["run"]["output"] == DEFAULT_OUTPUT


def test_worker_count(monkeypatch):
    monkeypatch.delenv(ENV_THREADS, raising=False)
    assert worker_count(3) == 3
    assert worker_count() >= 1
    monkeypatch.setenv(ENV_THREADS, "2")
    assert worker_count() == 2
    assert worker_count(5) == 5
    monkeypatch.setenv(ENV_THREADS, "many")
    with pytest.raises(ConfigError):
        worker_count()
    with pytest.raises(ConfigError):
        worker_count(0)
