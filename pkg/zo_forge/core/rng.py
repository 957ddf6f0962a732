"""Deterministic, re-seedable standard-normal stream.

The stream is defined by its algorithm rather than a platform default:

* uniforms: SplitMix64 counter mode. With ``key = mix64(seed)`` the i-th
  uniform is ``(mix64(key + (i + 1) * GOLDEN) >> 11) * 2**-53``.
* normals: Box-Muller on consecutive uniform pairs. Pair k consumes uniforms
  2k and 2k+1 and yields draw 2k (cosine branch) and draw 2k+1 (sine branch);
  nothing is discarded.

Draws are produced a block at a time into buffers allocated once per stream,
so re-seeding and drawing never allocate memory proportional to the number of
draws. Consumers iterate elements in their own documented order; the stream
imposes none.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from ..const import STREAM_BLOCK

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_NEG_53 = 2.0**-53
_TWO_PI = 2.0 * math.pi

_U64_GOLDEN = np.uint64(_GOLDEN)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)
_U64_30 = np.uint64(30)
_U64_27 = np.uint64(27)
_U64_31 = np.uint64(31)
_U64_11 = np.uint64(11)


def _check_seed(seed: int) -> int:
    value = int(seed)
    if not 0 <= value <= _MASK64:
        raise ValueError(f"Seed {seed} outside the unsigned 64-bit range")
    return value


def mix64(value: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z = value & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def uniform_at(key: int, index: int) -> float:
    """The index-th uniform in [0, 1) of the counter stream keyed by `key`."""
    return (mix64(key + (index + 1) * _GOLDEN) >> 11) * _TWO_NEG_53


class GaussianStream:
    """Counter-based standard-normal stream; one consumer at a time."""

    def __init__(self, seed: int = 0, block: int = STREAM_BLOCK) -> None:
        if block <= 0 or block % 2:
            raise ValueError(f"Block size must be a positive even number, got {block}")
        self.block = block
        half = block // 2
        self._counter = np.arange(1, block + 1, dtype=np.uint64)
        self._state = np.empty(block, dtype=np.uint64)
        self._scratch = np.empty(block, dtype=np.uint64)
        self._uniform = np.empty(block, dtype=np.float64)
        self._radius = np.empty(half, dtype=np.float64)
        self._angle = np.empty(half, dtype=np.float64)
        self._trig = np.empty(half, dtype=np.float64)
        self._cache = np.empty(block, dtype=np.float64)
        self._u1 = self._uniform[0::2]
        self._u2 = self._uniform[1::2]
        self._cos_out = self._cache[0::2]
        self._sin_out = self._cache[1::2]
        self.seed = 0
        self.position = 0
        self._key = 0
        self._cached_block = -1
        self.reset(seed)

    def reset(self, seed: int) -> "GaussianStream":
        self.seed = _check_seed(seed)
        self._key = mix64(self.seed)
        self.position = 0
        self._cached_block = -1
        return self

    def _fill_block(self, block_index: int) -> None:
        state = self._state
        scratch = self._scratch
        start = (block_index * self.block) & _MASK64
        np.add(self._counter, np.uint64(start), out=state)
        np.multiply(state, _U64_GOLDEN, out=state)
        np.add(state, np.uint64(self._key), out=state)

        np.right_shift(state, _U64_30, out=scratch)
        np.bitwise_xor(state, scratch, out=state)
        np.multiply(state, _U64_MIX1, out=state)
        np.right_shift(state, _U64_27, out=scratch)
        np.bitwise_xor(state, scratch, out=state)
        np.multiply(state, _U64_MIX2, out=state)
        np.right_shift(state, _U64_31, out=scratch)
        np.bitwise_xor(state, scratch, out=state)

        np.right_shift(state, _U64_11, out=state)
        # Exact for 53-bit values; a mixed-dtype ufunc would allocate a cast buffer.
        np.copyto(self._uniform, state, casting="unsafe")
        np.multiply(self._uniform, _TWO_NEG_53, out=self._uniform)

        np.subtract(1.0, self._u1, out=self._radius)
        np.log(self._radius, out=self._radius)
        np.multiply(self._radius, -2.0, out=self._radius)
        np.sqrt(self._radius, out=self._radius)
        np.multiply(self._u2, _TWO_PI, out=self._angle)
        np.cos(self._angle, out=self._trig)
        np.multiply(self._radius, self._trig, out=self._cos_out)
        np.sin(self._angle, out=self._trig)
        np.multiply(self._radius, self._trig, out=self._sin_out)
        self._cached_block = block_index

    def take(self, max_count: int) -> np.ndarray:
        """Next draws, at most `max_count` and never past a block boundary.

        The returned array is a view into the stream's buffer and is only
        valid until the next call.
        """
        block_index, offset = divmod(self.position, self.block)
        if block_index != self._cached_block:
            self._fill_block(block_index)
        count = min(int(max_count), self.block - offset)
        self.position += count
        return self._cache[offset : offset + count]

    def fill(self, out: np.ndarray) -> np.ndarray:
        """Copy the next len(out) draws into `out`."""
        filled = 0
        total = out.shape[0]
        while filled < total:
            chunk = self.take(total - filled)
            out[filled : filled + chunk.shape[0]] = chunk
            filled += chunk.shape[0]
        return out

    def draw(self) -> float:
        return float(self.take(1)[0])


def reset(stream: GaussianStream, seed: int) -> GaussianStream:
    return stream.reset(seed)


def draw_standard_normal(stream: GaussianStream) -> float:
    return stream.draw()


class SeedPurpose(enum.Enum):
    PERTURBATION = "perturbation"
    LAYER_SELECT = "layer_select"
    BATCH_SAMPLE = "batch_sample"

    @property
    def code(self) -> int:
        return _PURPOSE_CODES[self]


_PURPOSE_CODES = {
    SeedPurpose.PERTURBATION: 1,
    SeedPurpose.LAYER_SELECT: 2,
    SeedPurpose.BATCH_SAMPLE: 3,
}


@dataclass(frozen=True)
class SeedSchedule:
    base_seed: int

    def derive(self, purpose: SeedPurpose | str, step: int) -> int:
        return derive_seed(self, purpose, step)


def derive_seed(schedule: SeedSchedule | int, purpose: SeedPurpose | str, step: int) -> int:
    """Pure 64-bit seed for a (base_seed, purpose, step) triple."""
    base = schedule.base_seed if isinstance(schedule, SeedSchedule) else schedule
    purpose = SeedPurpose(purpose)
    payload = struct.pack("<QBQ", _check_seed(base), purpose.code, _check_seed(step))
    digest = hashlib.blake2b(payload, digest_size=8, person=b"zo_forge.seed").digest()
    return int.from_bytes(digest, "little")


def sample_without_replacement(n: int, k: int, seed: int) -> list[int]:
    """k distinct indices from range(n), uniform over ordered k-samples.

    Partial Fisher-Yates driven by the counter stream's uniforms; swaps are
    kept in a dict so the cost is O(k) regardless of n.
    """
    if not 0 <= k <= n:
        raise ValueError(f"Cannot sample {k} of {n} without replacement")
    key = mix64(_check_seed(seed))
    swapped: dict[int, int] = {}
    chosen: list[int] = []
    for i in range(k):
        j = i + int(uniform_at(key, i) * (n - i))
        value_i = swapped.get(i, i)
        chosen.append(swapped.get(j, j))
        swapped[j] = value_i
    return chosen
