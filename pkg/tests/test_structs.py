"""Tests for the checkpoint binary layout."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from zo_forge.core.params import ParameterVector, build_partition
from zo_forge.core.structs import (
    MAGIC,
    CheckpointData,
    CheckpointDecodeError,
    read_checkpoint,
    write_checkpoint,
)


def _vector() -> ParameterVector:
    partition = build_partition([2, 3], 1)
    return ParameterVector(values=np.array([0.5, -1.0, 2.0, 1e-300, np.pi, -0.0]), partition=partition)


def test_layout_is_little_endian_raw():
    data = CheckpointData(partition=_vector().partition, values=_vector().values).to_bytes()
    assert data[:8] == MAGIC
    assert struct.unpack_from("<QI", data, 8) == (6, 3)
    assert struct.unpack_from("<BQQ", data, 20) == (0, 0, 1)
    assert struct.unpack_from("<BQQ", data, 37) == (1, 1, 2)
    assert len(data) == 20 + 3 * 17 + 6 * 8
    assert struct.unpack_from("<d", data, 71)[0] == 0.5


def test_checkpoint_file_restores_parameters(tmp_path):
    pv = _vector()
    path = tmp_path / "best.ckpt"
    write_checkpoint(path, pv)
    restored = read_checkpoint(path)
    assert restored.partition == pv.partition
    np.testing.assert_array_equal(restored.values, pv.values)


def test_single_precision_is_stored_as_double(tmp_path):
    pv = ParameterVector(values=np.array([0.1, 0.2, 0.3], dtype=np.float32), partition=build_partition([3], 0))
    write_checkpoint(tmp_path / "x.ckpt", pv)
    restored = read_checkpoint(tmp_path / "x.ckpt")
    assert restored.values.dtype == np.float64
    np.testing.assert_array_equal(restored.values, pv.values.astype(np.float64))


def test_bad_magic():
    data = bytearray(CheckpointData(partition=_vector().partition, values=_vector().values).to_bytes())
    data[:8] = b"NOTACKPT"
    with pytest.raises(CheckpointDecodeError, match="magic"):
        CheckpointData.from_bytes(bytes(data))


def test_truncated_payload():
    data = CheckpointData(partition=_vector().partition, values=_vector().values).to_bytes()
    with pytest.raises(CheckpointDecodeError, match="length"):
        CheckpointData.from_bytes(data[:-3])
    with pytest.raises(CheckpointDecodeError):
        CheckpointData.from_bytes(data[:5])


def test_inconsistent_partition():
    header = struct.pack("<8sQI", MAGIC, 4, 1)
    body = struct.pack("<BQQ", 1, 0, 3) + np.zeros(4).tobytes()
    with pytest.raises(CheckpointDecodeError, match="partition"):
        CheckpointData.from_bytes(header + body)
