"""Tests for the flat parameter store and its partition."""

from __future__ import annotations

import numpy as np
import pytest

from zo_forge.core.params import (
    LayerPartition,
    ParameterVector,
    PartitionError,
    PartitionSizeError,
    build_partition,
    snapshot,
)


def test_build_partition_layout():
    partition = build_partition([4, 4], 2)
    assert partition.always_active == ((0, 2),)
    assert partition.layers == ((2, 4), (6, 4))
    assert partition.total_len == 10


def test_build_partition_without_layers():
    partition = build_partition([], 5)
    assert partition.num_layers == 0
    assert partition.total_len == 5


def test_build_partition_all_sparsifiable():
    partition = build_partition([3], 0)
    assert partition.always_active == ()
    assert partition.layers == ((0, 3),)


def test_build_partition_overflow():
    with pytest.raises(PartitionSizeError):
        build_partition([2**62, 2**62], 0)


def test_build_partition_rejects_empty_layer():
    with pytest.raises(PartitionError):
        build_partition([3, 0], 1)


def test_partition_rejects_overlap():
    with pytest.raises(PartitionError, match="overlap"):
        LayerPartition(layers=((0, 3), (2, 3)), always_active=(), total_len=5)


def test_partition_rejects_descending_layers():
    with pytest.raises(PartitionError, match="ascending"):
        LayerPartition(layers=((3, 2), (1, 2)), always_active=((0, 1),), total_len=5)


@pytest.mark.parametrize("sizes,always", [([7, 3, 11], 5), ([1] * 40, 0), ([], 9), ([2500] * 4, 0)])
def test_partition_covers_every_index_once(sizes, always):
    partition = build_partition(sizes, always)
    hits = np.zeros(partition.total_len, dtype=int)
    for offset, length in partition.active_ranges():
        hits[offset : offset + length] += 1
    assert (hits == 1).all()


def test_active_ranges_canonical_order():
    partition = build_partition([2, 3, 4], 1)
    assert list(partition.active_ranges({1})) == [(0, 1), (1, 2), (6, 4)]
    assert partition.active_count({1}) == 7
    assert partition.keep_fraction({0, 1, 2}) == pytest.approx(0.1)


def test_owner_of():
    partition = build_partition([2, 2], 1)
    assert partition.owner_of(0) is None
    assert partition.owner_of(1) == 0
    assert partition.owner_of(4) == 1
    with pytest.raises(PartitionError):
        partition.owner_of(5)


def test_check_dropped_out_of_range():
    with pytest.raises(PartitionError):
        build_partition([1, 1], 0).check_dropped({2})


def test_parameter_vector_length_must_match():
    with pytest.raises(PartitionError):
        ParameterVector(values=np.zeros(3), partition=build_partition([2], 0))


def test_parameter_vector_rejects_integer_values():
    with pytest.raises(PartitionError):
        ParameterVector(values=np.zeros(2, dtype=np.int64), partition=build_partition([2], 0))


def test_snapshot_copies():
    pv = ParameterVector(values=np.array([1.0, 2.0]), partition=build_partition([2], 0))
    copy = snapshot(pv)
    np.testing.assert_array_equal(copy, [1.0, 2.0])
    copy[0] = 99.0
    assert pv.values[0] == 1.0
    np.testing.assert_array_equal(snapshot(snapshot(pv)), snapshot(pv))


def test_layer_view_is_a_view():
    pv = ParameterVector.zeros(build_partition([2, 3], 1))
    pv.layer_view(1)[:] = 5.0
    np.testing.assert_array_equal(pv.values, [0, 0, 0, 5, 5, 5])
