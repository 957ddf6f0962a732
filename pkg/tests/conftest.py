"""Shared fixtures."""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from zo_forge.models import Batch, DatasetSpec, load_dataset, make_logistic, make_quadratic
from zo_forge.oracle import placeholder_batch


@pytest.fixture
def unit_batch() -> Batch:
    return placeholder_batch()


@pytest.fixture
def quad2():
    """L(theta) = 1/2 ||theta||^2 on d=2, one layer."""
    return make_quadratic(2, 1, 1.0, 0)


@pytest.fixture
def quad8():
    """d=8 quadratic with two layers of 4, condition number 4."""
    return make_quadratic(8, 2, 4.0, 3)


@pytest.fixture
def blobs():
    spec = DatasetSpec(kind="synthetic_gaussian_blobs", feature_dim=4, num_classes=2, num_samples=256, seed=7)
    return load_dataset(spec)


@pytest.fixture
def logistic4():
    return make_logistic(feature_dim=4, num_classes=2, layers=2, seed=0)


@pytest.fixture
def four_sample_batch() -> Batch:
    inputs = np.array([[1.0, -0.5, 0.25, 2.0], [0.0, 1.5, -1.0, 0.5], [-2.0, 0.5, 0.75, -0.25], [0.3, 0.3, -0.3, 1.0]])
    return Batch(inputs=inputs, labels=np.array([0, 1, 1, 0]))


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[str], Path]:
    def _write(text: str, name: str = "experiment.toml") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
