"""Independent verifiers for the optimizer.

Nothing here is on the optimization path: these routines materialize full
perturbation vectors, use analytic gradients and allocate freely.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .const import DEFAULT_SWEEP_LAYERS, DEFAULT_SWEEP_MAX_STEPS
from .core.params import ParameterVector, snapshot
from .core.rng import GaussianStream, SeedPurpose, derive_seed, sample_without_replacement
from .engine import (
    OptimizerConfig,
    SpecError,
    ZoNumericError,
    ZoOptimizer,
    estimate_gradient_sparse,
    scatter_active,
    select_dropped_layers,
)
from .models.base import Batch, LossFunction
from .models.data import Dataset, sample_batch
from .models.quadratic import QuadraticLoss, make_quadratic

_LOGGER = logging.getLogger(__name__)

BatchSource = Callable[[int], Batch]


class DegenerateInputError(ValueError):
    """Reference gradient is zero; relative error is undefined."""


def placeholder_batch() -> Batch:
    """One-row batch for objectives that ignore their data."""
    return Batch(inputs=np.zeros((1, 1)), labels=np.zeros(1))


def batch_source(data: Dataset | Batch | None, batch_size: int, seed: int) -> BatchSource:
    if data is None:
        batch = placeholder_batch()
        return lambda t: batch
    if isinstance(data, Batch):
        return lambda t: data
    size = min(batch_size, data.size)
    return lambda t: sample_batch(data, size, seed, t)


def _start(loss: LossFunction, theta0: ParameterVector | np.ndarray | None) -> np.ndarray:
    if theta0 is None:
        return loss.initial_parameters().values.astype(np.float64)
    return np.array(snapshot(theta0), dtype=np.float64)


def explicit_z_replay(
    cfg: OptimizerConfig,
    loss: LossFunction,
    steps: int,
    theta0: ParameterVector | np.ndarray | None = None,
    data: Dataset | Batch | None = None,
    sparse: bool = True,
) -> list[np.ndarray]:
    """Trajectory [theta_0, ..., theta_steps] computed with materialized directions.

    Uses the same seeds as the engine: the dropped set and the active-element
    draws are regenerated per step, scattered into a full d-vector z', and
    the update is written as plain vector algebra.
    """
    drop_count = cfg.validate(loss.num_layers) if sparse else 0
    batches = batch_source(data, cfg.batch_size, cfg.base_seed)
    partition = loss.partition
    theta = _start(loss, theta0)
    trajectory = [theta.copy()]
    for t in range(steps):
        dropped = select_dropped_layers(
            partition.num_layers, drop_count, derive_seed(cfg.base_seed, SeedPurpose.LAYER_SELECT, t)
        )
        seed = derive_seed(cfg.base_seed, SeedPurpose.PERTURBATION, t)
        z_active = GaussianStream(seed).fill(np.empty(partition.active_count(dropped)))
        z = scatter_active(partition, dropped, z_active)
        batch = batches(t)
        loss_plus = loss(theta + cfg.mu * z, batch)
        loss_minus = loss(theta - cfg.mu * z, batch)
        if not (math.isfinite(loss_plus) and math.isfinite(loss_minus)):
            raise ZoNumericError(f"Non-finite loss at step {t}")
        projected_grad = (loss_plus - loss_minus) / (2.0 * cfg.mu)
        theta = theta + (-(cfg.learning_rate * projected_grad)) * z
        trajectory.append(theta.copy())
    return trajectory


def finite_difference_gradient(
    loss: LossFunction,
    theta: ParameterVector | np.ndarray,
    batch: Batch,
    h: float = 1e-5,
    indices: Iterable[int] | None = None,
) -> np.ndarray:
    """Central differences with per-coordinate step h * (1 + |theta_i|).

    With `indices`, only those coordinates are filled; the rest stay zero.
    """
    if not h > 0:
        raise ValueError(f"Step h must be > 0, got {h}")
    values = np.array(snapshot(theta), dtype=np.float64)
    grad = np.zeros_like(values)
    coords = range(values.shape[0]) if indices is None else indices
    for i in coords:
        step = h * (1.0 + abs(values[i]))
        original = values[i]
        values[i] = original + step
        upper = loss(values, batch)
        values[i] = original - step
        lower = loss(values, batch)
        values[i] = original
        if not (math.isfinite(upper) and math.isfinite(lower)):
            raise ZoNumericError(f"Non-finite loss probing coordinate {i}")
        grad[i] = (upper - lower) / (2.0 * step)
    return grad


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    probes: int
    passed: bool
    tolerance: float
    worst_index: int | None = None


def grad_check(
    loss: LossFunction,
    theta: ParameterVector | np.ndarray,
    batch: Batch,
    probes: int = 10,
    tol: float = 1e-5,
    seed: int = 0,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare the analytic gradient with finite differences on random coordinates."""
    analytic = loss.analytic_gradient(theta, batch)
    probes = min(probes, analytic.shape[0])
    indices = sample_without_replacement(analytic.shape[0], probes, seed)
    numeric = finite_difference_gradient(loss, theta, batch, h=h, indices=indices)
    floor = max(1e-3 * float(np.abs(analytic).max(initial=0.0)), 1e-12)
    worst, worst_index = 0.0, None
    for i in indices:
        denom = max(abs(analytic[i]), abs(numeric[i]), floor)
        error = abs(analytic[i] - numeric[i]) / denom
        if error > worst:
            worst, worst_index = error, i
    report = GradCheckReport(
        max_rel_error=worst, probes=probes, passed=worst <= tol, tolerance=tol, worst_index=worst_index
    )
    _LOGGER.debug("Gradient check on %s: %s", loss.name, report)
    return report


def unbiasedness_test(
    loss: QuadraticLoss,
    theta: ParameterVector | np.ndarray,
    dropped: Iterable[int],
    K: int,
    mu: float,
    seed: int,
    batch: Batch | None = None,
) -> tuple[np.ndarray, float]:
    """Monte-Carlo mean of K sparse estimates against the masked true gradient."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    dropped = frozenset(dropped)
    batch = batch if batch is not None else placeholder_batch()
    pv = ParameterVector(values=np.array(snapshot(theta), dtype=np.float64), partition=loss.partition)
    reference = loss.analytic_gradient(pv, batch) * loss.partition.active_mask(dropped)
    norm = float(np.linalg.norm(reference))
    if norm == 0.0:
        raise DegenerateInputError("Masked true gradient is zero; choose theta away from the optimum")

    active = loss.partition.active_count(dropped)
    stream = GaussianStream(seed)
    z_active = np.empty(active)
    total = np.zeros(pv.d)
    for _ in range(K):
        stream.fill(z_active)
        total += estimate_gradient_sparse(pv, loss, batch, mu, z_active, dropped)
    mean = total / K
    return mean, float(np.linalg.norm(mean - reference)) / norm


@dataclass
class Trajectory:
    thetas: list[np.ndarray] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.thetas[-1]


def fo_sgd_baseline(
    loss: LossFunction,
    cfg: OptimizerConfig,
    steps: int,
    theta0: ParameterVector | np.ndarray | None = None,
    data: Dataset | Batch | None = None,
) -> Trajectory:
    """Gradient descent on analytic gradients with a constant learning rate.

    `losses[t]` is the loss at `thetas[t]` on the batch used for step t.
    """
    if not (math.isfinite(cfg.learning_rate) and cfg.learning_rate >= 0):
        raise SpecError(f"learning_rate must be finite and >= 0, got {cfg.learning_rate}")
    batches = batch_source(data, cfg.batch_size, cfg.base_seed)
    theta = _start(loss, theta0)
    trajectory = Trajectory(thetas=[theta.copy()])
    for t in range(steps):
        batch = batches(t)
        trajectory.losses.append(loss(theta, batch))
        theta = theta - cfg.learning_rate * loss.analytic_gradient(theta, batch)
        trajectory.thetas.append(theta.copy())
    return trajectory


@dataclass(frozen=True)
class ConvergenceTrial:
    d: int
    active_dim: int
    threshold: float
    steps_to_threshold: float
    lr: float
    mu: float
    keep_fraction: float = 1.0
    runs: tuple[int, ...] = ()
    converged: bool = True

    @property
    def rho(self) -> float:
        return self.active_dim / self.d


def sweep_learning_rate(active_dim: int, lipschitz: float) -> float:
    return 1.0 / (4.0 * (active_dim + 4) * lipschitz)


def _steps_to_threshold(
    loss: QuadraticLoss, cfg: OptimizerConfig, threshold: float
) -> tuple[int, bool]:
    pv = loss.initial_parameters()
    batch = placeholder_batch()
    if float(np.sum(loss.analytic_gradient(pv, batch) ** 2)) < threshold:
        return 0, True
    optimizer = ZoOptimizer(loss, cfg)
    for t in range(cfg.steps):
        optimizer.step(pv, batch, t)
        if float(np.sum(loss.analytic_gradient(pv, batch) ** 2)) < threshold:
            return t + 1, True
    return cfg.steps, False


def _run_cell(
    d: int, keep_fraction: float, threshold: float, repeats: int, seed: int, layers: int,
    max_steps: int, mu: float,
) -> ConvergenceTrial:
    layout = make_quadratic(d, layers, 1.0, seed)
    drop_count = int(round((1.0 - keep_fraction) * layout.num_layers))
    dropped = frozenset(range(drop_count))
    active_dim = layout.partition.active_count(dropped)
    lr = sweep_learning_rate(active_dim, layout.lipschitz)
    runs: list[int] = []
    converged = True
    for repeat in range(repeats):
        loss = make_quadratic(d, layers, 1.0, seed + repeat)
        cfg = OptimizerConfig(
            learning_rate=lr, mu=mu, steps=max_steps, drop_count=drop_count, batch_size=1,
            base_seed=seed + repeat,
        )
        steps, reached = _steps_to_threshold(loss, cfg, threshold)
        runs.append(steps)
        converged = converged and reached
    trial = ConvergenceTrial(
        d=d, active_dim=active_dim, threshold=threshold, steps_to_threshold=float(np.mean(runs)),
        lr=lr, mu=mu, keep_fraction=keep_fraction, runs=tuple(runs), converged=converged,
    )
    if not converged:
        _LOGGER.warning("Sweep cell d=%d keep=%.3g stopped at the %d-step limit", d, keep_fraction, max_steps)
    _LOGGER.info(
        "Sweep cell d=%d keep=%.3g: mean steps %.1f over %d repeats", d, keep_fraction,
        trial.steps_to_threshold, repeats,
    )
    return trial


def convergence_scaling_sweep(
    d_list: Sequence[int],
    keep_fractions: Sequence[float],
    threshold: float,
    repeats: int,
    seed: int,
    *,
    layers: int = DEFAULT_SWEEP_LAYERS,
    max_steps: int = DEFAULT_SWEEP_MAX_STEPS,
    mu: float = 1e-3,
    jobs: int | None = None,
) -> list[ConvergenceTrial]:
    """Steps until ||grad L||^2 < threshold on cond=1 quadratics, per (d, keep fraction).

    Learning rate per cell is 1 / (4 (rho d + 4) L). Results are sorted by
    (d, keep_fraction) whatever the completion order.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    for keep in keep_fractions:
        if not 0.0 <= keep <= 1.0:
            raise ValueError(f"keep fraction {keep} outside [0, 1]")
    cells = sorted({(int(d), float(keep)) for d in d_list for keep in keep_fractions})
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {
            cell: pool.submit(_run_cell, cell[0], cell[1], threshold, repeats, seed, layers, max_steps, mu)
            for cell in cells
        }
        return [futures[cell].result() for cell in cells]


def scaling_correlation(trials: Sequence[ConvergenceTrial]) -> float:
    """Spearman rank correlation between active dimension and mean steps."""
    if len(trials) < 2:
        raise ValueError("Need at least two trials to correlate")
    result = stats.spearmanr(
        [trial.active_dim for trial in trials], [trial.steps_to_threshold for trial in trials]
    )
    return float(result[0])
