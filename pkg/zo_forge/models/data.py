"""Datasets, deterministic splits and per-step batch sampling."""

from __future__ import annotations

import csv
import logging
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..const import (
    DATA_BLOBS,
    DATA_CSV,
    DATA_KINDS,
    DATA_QUADRATIC,
    DEFAULT_EVAL_FRACTION,
    DEFAULT_SEPARATION,
    TOKEN_CLIP,
)
from ..core.rng import GaussianStream, SeedPurpose, derive_seed, sample_without_replacement
from .base import Batch

_LOGGER = logging.getLogger(__name__)

PAD_TOKEN = 0


class DatasetError(ValueError):
    """Invalid dataset description."""


class DatasetParseError(DatasetError):
    """Malformed CSV data row (0-indexed, header excluded)."""

    def __init__(self, row: int, message: str) -> None:
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    feature_dim: int
    num_classes: int
    num_samples: int
    seed: int = 0
    path: str | None = None
    separation: float = DEFAULT_SEPARATION
    eval_fraction: float = DEFAULT_EVAL_FRACTION
    # Token encoding for sequence models; None keeps real-valued features.
    vocab: int | None = None
    seq_len: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in DATA_KINDS:
            raise DatasetError(f"Unknown dataset kind {self.kind!r}; expected one of {DATA_KINDS}")
        if min(self.feature_dim, self.num_classes, self.num_samples) < 1:
            raise DatasetError(
                f"Counts must be >= 1 (feature_dim={self.feature_dim}, "
                f"num_classes={self.num_classes}, num_samples={self.num_samples})"
            )
        if self.kind == DATA_CSV and not self.path:
            raise DatasetError("csv_classification requires a path")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise DatasetError(f"eval_fraction must lie in [0, 1), got {self.eval_fraction}")
        if self.vocab is not None and self.vocab < 2:
            raise DatasetError(f"vocab must be >= 2 for token encoding, got {self.vocab}")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DatasetError(
                f"Row count {self.inputs.shape[0]} does not match label count {self.labels.shape[0]}"
            )

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    def take(self, indices: list[int] | np.ndarray) -> "Dataset":
        index = np.asarray(indices, dtype=np.intp)
        return Dataset(inputs=self.inputs[index], labels=self.labels[index])

    def as_batch(self) -> Batch:
        return Batch(inputs=self.inputs, labels=self.labels)


def quantize_tokens(features: np.ndarray, vocab: int, clip: float = TOKEN_CLIP) -> np.ndarray:
    """Map each real feature to one of `vocab` equal-width bins over [-clip, clip]."""
    scaled = (np.clip(features, -clip, clip) + clip) / (2.0 * clip)
    return np.minimum((scaled * vocab).astype(np.intp), vocab - 1)


def tokenize_text(text: str, vocab: int, seq_len: int) -> np.ndarray:
    """Whitespace tokens hashed into 1..vocab-1, truncated or padded with PAD_TOKEN."""
    ids = np.full(seq_len, PAD_TOKEN, dtype=np.intp)
    for position, word in enumerate(text.split()[:seq_len]):
        ids[position] = 1 + zlib.crc32(word.encode("utf-8")) % (vocab - 1)
    return ids


def _blob_means(spec: DatasetSpec) -> np.ndarray:
    # Scaled basis vectors are pairwise `separation` apart.
    if spec.num_classes > spec.feature_dim and spec.num_classes > 1:
        raise DatasetError(
            f"Blobs need feature_dim >= num_classes ({spec.feature_dim} < {spec.num_classes})"
        )
    means = np.zeros((spec.num_classes, spec.feature_dim))
    means[:, : spec.num_classes] = np.eye(spec.num_classes) * (spec.separation / math.sqrt(2.0))
    return means - means.mean(axis=0)


def _make_blobs(spec: DatasetSpec) -> Dataset:
    labels = np.arange(spec.num_samples, dtype=np.intp) % spec.num_classes
    noise = GaussianStream(spec.seed).fill(np.empty(spec.num_samples * spec.feature_dim))
    inputs = _blob_means(spec)[labels] + noise.reshape(spec.num_samples, spec.feature_dim)
    return Dataset(inputs=inputs, labels=labels)


def _make_quadratic_data(spec: DatasetSpec) -> Dataset:
    # Quadratic objectives ignore the batch; rows only drive batch sampling.
    inputs = GaussianStream(spec.seed).fill(np.empty(spec.num_samples * spec.feature_dim))
    return Dataset(
        inputs=inputs.reshape(spec.num_samples, spec.feature_dim),
        labels=np.zeros(spec.num_samples),
    )


def _parse_label(value: str, row: int, num_classes: int) -> int:
    try:
        label = int(value)
    except ValueError as err:
        raise DatasetParseError(row, f"label {value!r} is not an integer") from err
    if not 0 <= label < num_classes:
        raise DatasetParseError(row, f"label {label} outside [0, {num_classes})")
    return label


def _read_csv(spec: DatasetSpec) -> Dataset:
    path = Path(spec.path or "")
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
    except OSError as err:
        raise DatasetError(f"Cannot read dataset {path}: {err}") from err
    except UnicodeDecodeError as err:
        raise DatasetError(f"Dataset {path} is not valid UTF-8: {err}") from err
    if not rows:
        raise DatasetError(f"Dataset {path} is empty")

    header = [column.strip() for column in rows[0]]
    data = rows[1:]
    if not data:
        raise DatasetError(f"Dataset {path} has a header but no data rows")
    if header[:1] != ["label"] or len(header) < 2:
        raise DatasetError(f"Header must start with 'label', got {header}")

    labels = np.empty(len(data), dtype=np.intp)
    if header[1:] == ["text"]:
        if spec.vocab is None or spec.seq_len is None:
            raise DatasetError("Text datasets need vocab and seq_len for tokenization")
        inputs = np.empty((len(data), spec.seq_len), dtype=np.intp)
        for row, fields in enumerate(data):
            if len(fields) != 2:
                raise DatasetParseError(row, f"expected 2 fields, got {len(fields)}")
            labels[row] = _parse_label(fields[0], row, spec.num_classes)
            inputs[row] = tokenize_text(fields[1], spec.vocab, spec.seq_len)
        return Dataset(inputs=inputs, labels=labels)

    width = len(header) - 1
    if width != spec.feature_dim:
        raise DatasetError(f"Header has {width} features, expected feature_dim={spec.feature_dim}")
    features = np.empty((len(data), width))
    for row, fields in enumerate(data):
        if len(fields) != width + 1:
            raise DatasetParseError(row, f"expected {width + 1} fields, got {len(fields)}")
        labels[row] = _parse_label(fields[0], row, spec.num_classes)
        try:
            features[row] = [float(field) for field in fields[1:]]
        except ValueError as err:
            raise DatasetParseError(row, f"non-numeric feature ({err})") from err
        if not np.isfinite(features[row]).all():
            raise DatasetParseError(row, "non-finite feature")
    return Dataset(inputs=features, labels=labels)


def _encode(spec: DatasetSpec, data: Dataset) -> Dataset:
    if spec.vocab is None or data.inputs.dtype == np.intp:
        return data
    return Dataset(inputs=quantize_tokens(data.inputs, spec.vocab), labels=data.labels)


def split_dataset(data: Dataset, eval_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded permutation; the first round(n * eval_fraction) rows are held out."""
    order = sample_without_replacement(data.size, data.size, seed)
    held_out = int(round(data.size * eval_fraction))
    if data.size - held_out < 1:
        raise DatasetError(f"Split leaves no training rows ({data.size} rows, eval_fraction={eval_fraction})")
    return data.take(order[held_out:]), data.take(order[:held_out])


def load_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Build or read the dataset and return its (train, eval) split."""
    if spec.kind == DATA_BLOBS:
        data = _make_blobs(spec)
    elif spec.kind == DATA_QUADRATIC:
        data = _make_quadratic_data(spec)
    else:
        data = _read_csv(spec)
    data = _encode(spec, data)
    train, held_out = split_dataset(data, spec.eval_fraction, spec.seed)
    _LOGGER.debug(
        "Loaded %s dataset: %d train rows, %d eval rows", spec.kind, train.size, held_out.size
    )
    return train, held_out


def sample_batch(data: Dataset, batch_size: int, seed: int, step: int) -> Batch:
    """Rows drawn without replacement, deterministic in (seed, step)."""
    if not 1 <= batch_size <= data.size:
        raise DatasetError(f"batch_size {batch_size} outside [1, {data.size}]")
    indices = sample_without_replacement(
        data.size, batch_size, derive_seed(seed, SeedPurpose.BATCH_SAMPLE, step)
    )
    index = np.asarray(indices, dtype=np.intp)
    return Batch(inputs=data.inputs[index], labels=data.labels[index])
