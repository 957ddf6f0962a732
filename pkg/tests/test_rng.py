"""Tests for the deterministic normal stream and seed derivation."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from zo_forge.core.rng import (
    GaussianStream,
    SeedPurpose,
    SeedSchedule,
    derive_seed,
    draw_standard_normal,
    mix64,
    reset,
    sample_without_replacement,
    uniform_at,
)


def test_reset_replays_the_sequence():
    stream = GaussianStream()
    reset(stream, 42)
    first = [draw_standard_normal(stream) for _ in range(5)]
    reset(stream, 42)
    assert [draw_standard_normal(stream) for _ in range(5)] == first
    assert stream.position == 5


def test_zero_is_a_valid_seed():
    stream = reset(GaussianStream(7), 0)
    assert stream.position == 0
    assert math.isfinite(stream.draw())


def test_different_seeds_give_different_first_draws():
    stream = GaussianStream()
    firsts = {reset(stream, seed).draw() for seed in range(1000)}
    assert len(firsts) == 1000


def test_seed_out_of_range():
    with pytest.raises(ValueError):
        GaussianStream(-1)
    with pytest.raises(ValueError):
        GaussianStream(1 << 64)


def test_box_muller_pairs():
    seed = 99
    stream = GaussianStream(seed)
    key = mix64(seed)
    u0, u1 = uniform_at(key, 0), uniform_at(key, 1)
    radius = math.sqrt(-2.0 * math.log(1.0 - u0))
    assert stream.draw() == pytest.approx(radius * math.cos(2 * math.pi * u1), rel=1e-12, abs=1e-15)
    assert stream.draw() == pytest.approx(radius * math.sin(2 * math.pi * u1), rel=1e-12, abs=1e-15)


def test_draws_continue_across_block_boundaries():
    reference = GaussianStream(5, block=64).fill(np.empty(1000))
    stream = GaussianStream(5, block=64)
    pieces = [stream.fill(np.empty(n)) for n in (1, 63, 2, 127, 300, 507)]
    np.testing.assert_array_equal(np.concatenate(pieces), reference)


def test_block_size_does_not_change_the_sequence():
    small = GaussianStream(11, block=16).fill(np.empty(500))
    large = GaussianStream(11).fill(np.empty(500))
    np.testing.assert_array_equal(small, large)


def test_interleaved_streams_agree():
    a, b = GaussianStream(3), GaussianStream(3)
    for _ in range(100):
        assert a.draw() == b.draw()


def test_moments():
    draws = GaussianStream(2024).fill(np.empty(1_000_000))
    assert abs(draws.mean()) < 0.005
    assert 0.99 <= draws.var() <= 1.01


def test_kolmogorov_smirnov():
    draws = GaussianStream(12345).fill(np.empty(100_000))
    assert stats.kstest(draws, "norm").statistic < 0.006


def test_derive_seed_is_pure():
    schedule = SeedSchedule(17)
    assert schedule.derive(SeedPurpose.PERTURBATION, 5) == derive_seed(17, "perturbation", 5)
    assert 0 <= derive_seed(17, SeedPurpose.BATCH_SAMPLE, 5) < 1 << 64


def test_derive_seed_separates_purposes_and_steps():
    rng = np.random.default_rng(0)
    bases = rng.integers(0, 2**63, size=10_000)
    steps = rng.integers(0, 2**31, size=10_000)
    for base, step in zip(bases.tolist(), steps.tolist()):
        perturbation = derive_seed(base, SeedPurpose.PERTURBATION, step)
        assert perturbation != derive_seed(base, SeedPurpose.LAYER_SELECT, step)
        assert perturbation != derive_seed(base, SeedPurpose.PERTURBATION, step + 1)


def test_sample_without_replacement():
    chosen = sample_without_replacement(50, 20, 8)
    assert len(set(chosen)) == 20
    assert all(0 <= i < 50 for i in chosen)
    assert chosen == sample_without_replacement(50, 20, 8)
    assert sorted(sample_without_replacement(9, 9, 1)) == list(range(9))
    with pytest.raises(ValueError):
        sample_without_replacement(3, 4, 0)
