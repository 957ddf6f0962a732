"""Binary layout helpers for parameter checkpoints.

Little-endian layout::

    magic      8s   b"ZOFCKPT1"
    d          Q
    n_ranges   I
    n_ranges × (kind B, offset Q, len Q)     kind 0 = always-active, 1 = layer
    d × f64    raw parameter values
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import struct

import numpy as np

from .params import LayerPartition, ParameterVector

MAGIC = b"ZOFCKPT1"
KIND_ALWAYS_ACTIVE = 0
KIND_LAYER = 1

_HEADER = struct.Struct("<8sQI")
_RANGE = struct.Struct("<BQQ")


class CheckpointDecodeError(ValueError):
    """Error decoding a checkpoint payload."""


@dataclass
class RangeDescriptor:
    kind: int
    offset: int
    length: int

    @classmethod
    def from_bytes(cls, data: bytes) -> "RangeDescriptor":
        kind, offset, length = _RANGE.unpack(data[: _RANGE.size])
        if kind not in (KIND_ALWAYS_ACTIVE, KIND_LAYER):
            raise CheckpointDecodeError(f"Unknown range kind {kind:#04x}")
        return cls(kind=kind, offset=offset, length=length)

    def to_bytes(self) -> bytes:
        return _RANGE.pack(self.kind, self.offset, self.length)


@dataclass
class CheckpointData:
    partition: LayerPartition
    values: np.ndarray

    @classmethod
    def from_bytes(cls, data: bytes) -> "CheckpointData":
        if len(data) < _HEADER.size:
            raise CheckpointDecodeError(
                f"Cannot decode checkpoint: length {len(data)} is less than the {_HEADER.size}-byte header"
            )
        magic, d, n_ranges = _HEADER.unpack(data[: _HEADER.size])
        if magic != MAGIC:
            raise CheckpointDecodeError(f"Bad magic {magic!r}, expected {MAGIC!r}")
        expected = _HEADER.size + n_ranges * _RANGE.size + d * 8
        if len(data) != expected:
            raise CheckpointDecodeError(
                f"Cannot decode checkpoint: length {len(data)} does not match expected {expected} "
                f"for d={d} and {n_ranges} range(s)"
            )
        cursor = _HEADER.size
        layers: list[tuple[int, int]] = []
        always_active: list[tuple[int, int]] = []
        for _ in range(n_ranges):
            descriptor = RangeDescriptor.from_bytes(data[cursor : cursor + _RANGE.size])
            target = layers if descriptor.kind == KIND_LAYER else always_active
            target.append((descriptor.offset, descriptor.length))
            cursor += _RANGE.size
        try:
            partition = LayerPartition(
                layers=tuple(layers), always_active=tuple(always_active), total_len=d
            )
        except ValueError as err:
            raise CheckpointDecodeError(f"Invalid partition descriptor: {err}") from err
        values = np.frombuffer(data, dtype="<f8", count=d, offset=cursor).astype(np.float64)
        return cls(partition=partition, values=values)

    def to_bytes(self) -> bytes:
        descriptors = [
            RangeDescriptor(KIND_ALWAYS_ACTIVE, offset, length)
            for offset, length in self.partition.always_active
        ] + [RangeDescriptor(KIND_LAYER, offset, length) for offset, length in self.partition.layers]
        header = _HEADER.pack(MAGIC, self.partition.total_len, len(descriptors))
        body = b"".join(descriptor.to_bytes() for descriptor in descriptors)
        return header + body + np.asarray(self.values, dtype="<f8").tobytes()


def write_checkpoint(path: Path, pv: ParameterVector) -> None:
    Path(path).write_bytes(CheckpointData(partition=pv.partition, values=pv.values).to_bytes())


def read_checkpoint(path: Path) -> ParameterVector:
    data = CheckpointData.from_bytes(Path(path).read_bytes())
    return ParameterVector(values=data.values, partition=data.partition)
