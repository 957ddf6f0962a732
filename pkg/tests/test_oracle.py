"""Tests for the independent verifiers."""

from __future__ import annotations

import math

import numpy as np
import pytest

from zo_forge.engine import OptimizerConfig, SpecError, ZoOptimizer
from zo_forge.models import make_logistic, make_mlp, make_quadratic
from zo_forge.oracle import (
    DegenerateInputError,
    convergence_scaling_sweep,
    explicit_z_replay,
    finite_difference_gradient,
    fo_sgd_baseline,
    placeholder_batch,
    scaling_correlation,
    sweep_learning_rate,
    unbiasedness_test,
)


def _engine_trajectory(loss, cfg, steps, batch):
    pv = loss.initial_parameters()
    optimizer = ZoOptimizer(loss, cfg)
    trajectory = [pv.values.copy()]
    for t in range(steps):
        optimizer.step(pv, batch, t)
        trajectory.append(pv.values.copy())
    return trajectory


@pytest.mark.parametrize("which", ["quadratic", "logistic", "mlp"])
@pytest.mark.parametrize("drop_count", [0, 1])
def test_replay_matches_engine(which, drop_count, four_sample_batch):
    if which == "quadratic":
        loss, batch = make_quadratic(8, 2, 4.0, 1), placeholder_batch()
    elif which == "logistic":
        loss, batch = make_logistic(4, 2, 2, 0), four_sample_batch
    else:
        loss, batch = make_mlp(4, 5, 2, 0), four_sample_batch
    cfg = OptimizerConfig(
        learning_rate=0.05, mu=1e-3, steps=20, drop_count=drop_count, batch_size=batch.size, base_seed=17
    )
    engine = _engine_trajectory(loss, cfg, 20, batch)
    replay = explicit_z_replay(cfg, loss, 20, data=batch)
    assert len(replay) == 21
    for ours, reference in zip(engine, replay):
        np.testing.assert_allclose(ours, reference, rtol=1e-10, atol=1e-12)


def test_replay_with_everything_dropped_keeps_theta(quad8):
    cfg = OptimizerConfig(learning_rate=0.1, mu=1e-3, steps=5, drop_count=2, batch_size=1)
    replay = explicit_z_replay(cfg, quad8, 5)
    for theta in replay[1:]:
        np.testing.assert_array_equal(theta, replay[0])


def test_dense_replay_ignores_drop_count(quad8):
    cfg = OptimizerConfig(learning_rate=0.1, mu=1e-3, steps=5, drop_count=2, batch_size=1)
    replay = explicit_z_replay(cfg, quad8, 5, sparse=False)
    assert not np.array_equal(replay[-1], replay[0])


def test_finite_difference_on_quadratic(quad2, unit_batch):
    grad = finite_difference_gradient(quad2, np.array([1.0, 0.0]), unit_batch)
    np.testing.assert_allclose(grad, [1.0, 0.0], atol=1e-10)
    partial = finite_difference_gradient(quad2, np.array([1.0, 2.0]), unit_batch, indices=[1])
    assert partial[0] == 0.0
    assert partial[1] == pytest.approx(2.0, rel=1e-8)
    with pytest.raises(ValueError):
        finite_difference_gradient(quad2, np.zeros(2), unit_batch, h=0.0)


def test_finite_difference_matches_analytic_logistic(logistic4, four_sample_batch):
    theta = np.random.default_rng(0).normal(size=logistic4.d)
    np.testing.assert_allclose(
        finite_difference_gradient(logistic4, theta, four_sample_batch),
        logistic4.analytic_gradient(theta, four_sample_batch),
        rtol=1e-6,
        atol=1e-9,
    )


def test_sparse_estimate_is_unbiased(quad8):
    theta = quad8.initial_parameters()
    mean, rel_error = unbiasedness_test(quad8, theta, {1}, 100_000, 1e-3, 4)
    assert rel_error < 0.02
    assert np.all(mean[4:] == 0.0)


def test_dense_estimate_is_unbiased(quad8):
    _, rel_error = unbiasedness_test(quad8, quad8.initial_parameters(), (), 100_000, 1e-3, 5)
    assert rel_error < 0.02


@pytest.mark.slow
def test_unbiasedness_error_decays_with_sample_count(quad8):
    assert quad8.partition.active_count({1}) == 4
    theta = quad8.initial_parameters()
    replicates = {1_000: 40, 10_000: 16, 100_000: 4}
    rms = []
    for K, count in replicates.items():
        errors = [unbiasedness_test(quad8, theta, {1}, K, 1e-3, 1000 * K + r)[1] for r in range(count)]
        rms.append(math.sqrt(np.mean(np.square(errors))))
    slope = np.polyfit(np.log10(list(replicates)), np.log10(rms), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)


def test_unbiasedness_rejects_zero_gradient(quad8):
    with pytest.raises(DegenerateInputError):
        unbiasedness_test(quad8, np.zeros(8), (), 10, 1e-3, 0)
    # The masked gradient vanishes when every layer is dropped.
    with pytest.raises(DegenerateInputError):
        unbiasedness_test(quad8, quad8.initial_parameters(), {0, 1}, 10, 1e-3, 0)


def test_fo_baseline_on_quadratic(quad8):
    cfg = OptimizerConfig(learning_rate=0.1, steps=1, batch_size=1)
    trajectory = fo_sgd_baseline(quad8, cfg, 50)
    assert len(trajectory.thetas) == 51
    assert len(trajectory.losses) == 50
    assert all(later <= earlier for earlier, later in zip(trajectory.losses, trajectory.losses[1:]))


def test_fo_baseline_with_zero_learning_rate(quad8):
    cfg = OptimizerConfig(learning_rate=0.0, steps=1, batch_size=1)
    trajectory = fo_sgd_baseline(quad8, cfg, 5)
    for theta in trajectory.thetas:
        np.testing.assert_array_equal(theta, trajectory.thetas[0])
    with pytest.raises(SpecError):
        fo_sgd_baseline(quad8, OptimizerConfig(learning_rate=-1.0), 1)


def test_fo_baseline_separates_blobs(blobs):
    train, _ = blobs
    loss = make_logistic(4, 2, 1, 0)
    cfg = OptimizerConfig(learning_rate=0.5, steps=1, batch_size=train.size)
    trajectory = fo_sgd_baseline(loss, cfg, 2000, data=train.as_batch())
    assert loss.accuracy(trajectory.final, train.as_batch()) >= 0.99


def test_sweep_learning_rate():
    assert sweep_learning_rate(124, 2.0) == pytest.approx(1.0 / (4 * 128 * 2.0))


def test_sweep_threshold_above_start_needs_no_steps():
    trials = convergence_scaling_sweep([16], [1.0], threshold=2.0, repeats=3, seed=0, layers=4)
    assert [trial.steps_to_threshold for trial in trials] == [0.0]
    assert trials[0].runs == (0, 0, 0)


def test_sweep_steps_scale_with_dimension():
    trials = convergence_scaling_sweep([128, 512], [1.0], threshold=1e-2, repeats=10, seed=3, jobs=2)
    small, large = trials
    assert (small.d, large.d) == (128, 512)
    assert small.converged and large.converged
    assert 2.5 <= large.steps_to_threshold / small.steps_to_threshold <= 5.5


def test_sweep_rank_correlation_on_dimension_grid():
    trials = convergence_scaling_sweep([32, 64, 128], [1.0], threshold=1e-2, repeats=5, seed=9)
    assert [trial.active_dim for trial in trials] == [32, 64, 128]
    assert scaling_correlation(trials) > 0.9


@pytest.mark.slow
def test_sweep_keep_fraction_at_fixed_dimension():
    trials = convergence_scaling_sweep([512], [0.25, 1.0], threshold=1e-2, repeats=10, seed=5)
    sparse, dense = trials
    assert sparse.keep_fraction == 0.25
    assert sparse.active_dim == 128
    assert sparse.rho == pytest.approx(0.25)
    assert sparse.lr > dense.lr
    # Per-coordinate progress matches under the sweep learning rate.
    assert 0.5 <= dense.steps_to_threshold / sparse.steps_to_threshold <= 2.0


def test_sweep_validation():
    with pytest.raises(ValueError):
        convergence_scaling_sweep([8], [1.5], 1e-2, 1, 0)
    with pytest.raises(ValueError):
        convergence_scaling_sweep([8], [1.0], 0.0, 1, 0)
    with pytest.raises(ValueError):
        scaling_correlation([])
