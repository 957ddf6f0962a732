"""Flat parameter store with a layer partition overlay."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

_INDEX_MAX = int(np.iinfo(np.intp).max)


class PartitionError(ValueError):
    """Partition does not describe the parameter vector."""


class PartitionSizeError(PartitionError):
    """Total partition size does not fit the addressable range."""


Range = tuple[int, int]


@dataclass(frozen=True)
class LayerPartition:
    """Contiguous (offset, len) ranges: always-active segment plus N layers."""

    layers: tuple[Range, ...]
    always_active: tuple[Range, ...]
    total_len: int

    def __post_init__(self) -> None:
        ranges = sorted(self.always_active + self.layers)
        cursor = 0
        for offset, length in ranges:
            if length <= 0:
                raise PartitionError(f"Empty range at offset {offset}")
            if offset != cursor:
                raise PartitionError(
                    f"Ranges must be disjoint and cover [0, {self.total_len}); "
                    f"gap or overlap at index {min(offset, cursor)}"
                )
            cursor = offset + length
        if cursor != self.total_len:
            raise PartitionError(f"Ranges cover [0, {cursor}), expected [0, {self.total_len})")
        offsets = [offset for offset, _ in self.layers]
        if offsets != sorted(offsets):
            raise PartitionError("Layers must be ordered by ascending offset")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def check_dropped(self, dropped: Iterable[int]) -> None:
        for index in dropped:
            if not 0 <= index < self.num_layers:
                raise PartitionError(f"Layer index {index} outside [0, {self.num_layers})")

    def active_ranges(self, dropped: Iterable[int] = ()) -> Iterator[Range]:
        """Yield ranges in canonical order: always-active first, then kept layers ascending."""
        skip = frozenset(dropped)
        yield from self.always_active
        for index, layer in enumerate(self.layers):
            if index not in skip:
                yield layer

    def active_count(self, dropped: Iterable[int] = ()) -> int:
        return sum(length for _, length in self.active_ranges(dropped))

    def keep_fraction(self, dropped: Iterable[int] = ()) -> float:
        if self.total_len == 0:
            return 0.0
        return self.active_count(dropped) / self.total_len

    def active_mask(self, dropped: Iterable[int] = ()) -> np.ndarray:
        """Boolean mask of active coordinates (allocates d bools; oracle use only)."""
        mask = np.zeros(self.total_len, dtype=bool)
        for offset, length in self.active_ranges(dropped):
            mask[offset : offset + length] = True
        return mask

    def owner_of(self, index: int) -> int | None:
        """Layer index owning a coordinate, None for always-active coordinates."""
        if not 0 <= index < self.total_len:
            raise PartitionError(f"Index {index} outside [0, {self.total_len})")
        for layer_index, (offset, length) in enumerate(self.layers):
            if offset <= index < offset + length:
                return layer_index
        return None


def build_partition(layer_sizes: Iterable[int], always_active_size: int) -> LayerPartition:
    """Lay out the always-active range first, then the layers in the given order."""
    sizes = [int(size) for size in layer_sizes]
    if always_active_size < 0 or any(size <= 0 for size in sizes):
        raise PartitionError(
            f"Sizes must be positive (layers={sizes}, always_active={always_active_size})"
        )
    total = int(always_active_size) + sum(sizes)
    if total > _INDEX_MAX:
        raise PartitionSizeError(f"Total size {total} exceeds addressable range {_INDEX_MAX}")

    always_active: tuple[Range, ...] = ()
    if always_active_size > 0:
        always_active = ((0, int(always_active_size)),)
    layers: list[Range] = []
    offset = int(always_active_size)
    for size in sizes:
        layers.append((offset, size))
        offset += size
    return LayerPartition(layers=tuple(layers), always_active=always_active, total_len=total)


@dataclass
class ParameterVector:
    """The single mutable optimization state; one writer at a time."""

    values: np.ndarray
    partition: LayerPartition

    def __post_init__(self) -> None:
        if self.values.ndim != 1:
            raise PartitionError(f"Parameter values must be 1-d, got shape {self.values.shape}")
        if self.values.shape[0] != self.partition.total_len:
            raise PartitionError(
                f"Length {self.values.shape[0]} does not match partition total {self.partition.total_len}"
            )
        if self.values.dtype not in (np.float64, np.float32):
            raise PartitionError(f"Unsupported dtype {self.values.dtype}")

    @classmethod
    def zeros(cls, partition: LayerPartition, dtype: np.dtype | type = np.float64) -> "ParameterVector":
        return cls(values=np.zeros(partition.total_len, dtype=dtype), partition=partition)

    @property
    def d(self) -> int:
        return self.partition.total_len

    def layer_view(self, index: int) -> np.ndarray:
        offset, length = self.partition.layers[index]
        return self.values[offset : offset + length]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def copy(self) -> "ParameterVector":
        return ParameterVector(values=self.values.copy(), partition=self.partition)


def snapshot(pv: ParameterVector | np.ndarray) -> np.ndarray:
    """Value-equal copy of the parameters; never used inside a step."""
    values = pv.values if isinstance(pv, ParameterVector) else pv
    return np.array(values, copy=True)
