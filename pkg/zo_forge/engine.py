"""SPSA estimation and the ZO-SGD / LeZO update steps.

Element order contract: every pass over the parameters walks the
always-active ranges first, then the kept layers by ascending index, and the
elements of each range by ascending offset. Dropped layers consume no stream
draws, so the perturbation and update passes of one step read the same draws
for the same elements.
"""

from __future__ import annotations

import logging
import math
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import ContextManager, Iterable

import numpy as np

from .const import (
    DEFAULT_BASE_SEED,
    DEFAULT_BATCH_SIZE,
    DEFAULT_DROP_COUNT,
    DEFAULT_LEARNING_RATE,
    DEFAULT_MU,
    DEFAULT_STEPS,
    STREAM_BLOCK,
)
from .core.memory import AllocationLedger, AllocationObserver, step_allocation_delta
from .core.params import LayerPartition, ParameterVector, PartitionError
from .core.rng import GaussianStream, SeedPurpose, derive_seed, sample_without_replacement
from .models.base import Batch, LossFunction

_LOGGER = logging.getLogger(__name__)

_SEED_LIMIT = 1 << 64


class SpecError(ValueError):
    """Perturbation spec or optimizer config does not fit the parameters."""


class ZoNumericError(ArithmeticError):
    """Loss or projected gradient is not finite."""


@dataclass(frozen=True)
class PerturbationSpec:
    seed: int
    scale: float
    dropped: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if not 0 <= self.seed < _SEED_LIMIT:
            raise SpecError(f"Seed {self.seed} outside the unsigned 64-bit range")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise SpecError(f"Perturbation scale must be finite and > 0, got {self.scale}")
        object.__setattr__(self, "dropped", frozenset(self.dropped))

    def validate(self, partition: LayerPartition) -> None:
        try:
            partition.check_dropped(self.dropped)
        except PartitionError as err:
            raise SpecError(str(err)) from err


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    mu: float = DEFAULT_MU
    steps: int = DEFAULT_STEPS
    drop_count: int = DEFAULT_DROP_COUNT
    batch_size: int = DEFAULT_BATCH_SIZE
    base_seed: int = DEFAULT_BASE_SEED
    # Alternative to drop_count: fraction of layers dropped per step.
    drop_fraction: float | None = None

    def resolve_drop_count(self, num_layers: int) -> int:
        if self.drop_fraction is None:
            return self.drop_count
        return int(round(self.drop_fraction * num_layers))

    def validate(self, num_layers: int) -> int:
        """Check the config against a model with `num_layers` layers; returns n."""
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise SpecError(f"learning_rate must be finite and > 0, got {self.learning_rate}")
        if not (math.isfinite(self.mu) and self.mu > 0):
            raise SpecError(f"mu must be finite and > 0, got {self.mu}")
        if self.steps < 1:
            raise SpecError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise SpecError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.base_seed < _SEED_LIMIT:
            raise SpecError(f"base_seed {self.base_seed} outside the unsigned 64-bit range")
        if self.drop_fraction is not None:
            if self.drop_count != DEFAULT_DROP_COUNT:
                raise SpecError("Give either drop_count or drop_fraction, not both")
            if not 0.0 <= self.drop_fraction <= 1.0:
                raise SpecError(f"drop_fraction must lie in [0, 1], got {self.drop_fraction}")
        drop_count = self.resolve_drop_count(num_layers)
        if not 0 <= drop_count <= num_layers:
            raise SpecError(f"drop_count {drop_count} outside [0, {num_layers}]")
        return drop_count


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss_plus: float
    loss_minus: float
    projected_grad: float
    dropped: frozenset[int] = field(default_factory=frozenset)
    time_forward_ns: int = 0
    time_perturb_ns: int = 0
    time_update_ns: int = 0
    time_total_ns: int = 0
    alloc_delta_bytes: int = 0

    @property
    def time_other_ns(self) -> int:
        return max(
            0, self.time_total_ns - self.time_forward_ns - self.time_perturb_ns - self.time_update_ns
        )


class PhaseTimer:
    """Monotonic nanosecond totals for the forward, perturbation and update phases."""

    __slots__ = ("forward_ns", "perturb_ns", "update_ns")

    def __init__(self) -> None:
        self.forward_ns = 0
        self.perturb_ns = 0
        self.update_ns = 0


class StepWorkspace:
    """Buffers allocated once per optimizer and reused by every step."""

    def __init__(
        self,
        stream: GaussianStream | None = None,
        ledger: AllocationLedger | None = None,
        block: int = STREAM_BLOCK,
    ) -> None:
        self.stream = stream if stream is not None else GaussianStream(0, block)
        self.scratch = np.empty(self.stream.block, dtype=np.float64)
        # One buffer per parameter dtype; a mixed-dtype add allocates a cast buffer.
        self._scratch_by_dtype = {
            self.scratch.dtype: self.scratch,
            np.dtype(np.float32): np.empty(self.stream.block, dtype=np.float32),
        }
        self.ledger = ledger if ledger is not None else AllocationLedger()

    def scratch_for(self, dtype: np.dtype) -> np.ndarray:
        try:
            return self._scratch_by_dtype[np.dtype(dtype)]
        except KeyError as err:
            raise SpecError(f"Unsupported parameter dtype {np.dtype(dtype)}") from err

    def tracked(self) -> ContextManager[None]:
        return self.ledger.track() if self.ledger.armed else nullcontext()


def select_dropped_layers(num_layers: int, drop_count: int, seed: int) -> frozenset[int]:
    """n distinct layer indices from [0, N), uniform over n-subsets."""
    if not 0 <= drop_count <= num_layers:
        raise SpecError(f"Cannot drop {drop_count} of {num_layers} layers")
    return frozenset(sample_without_replacement(num_layers, drop_count, seed))


def _add_scaled_draws(
    values: np.ndarray, partition: LayerPartition, dropped: Iterable[int], seed: int,
    coeff: float, workspace: StepWorkspace,
) -> None:
    """values[i] += coeff * z_i over the active elements, in canonical order."""
    stream = workspace.stream.reset(seed)
    scratch = workspace.scratch_for(values.dtype)
    narrow = scratch.dtype != np.float64
    for offset, length in partition.active_ranges(dropped):
        cursor = offset
        end = offset + length
        while cursor < end:
            draws = stream.take(end - cursor)
            count = draws.shape[0]
            scaled = scratch[:count]
            if narrow:
                np.copyto(scaled, draws, casting="same_kind")
                np.multiply(scaled, scaled.dtype.type(coeff), out=scaled)
            else:
                np.multiply(draws, coeff, out=scaled)
            target = values[cursor : cursor + count]
            np.add(target, scaled, out=target)
            cursor += count


def perturb_parameters(
    pv: ParameterVector, spec: PerturbationSpec, factor: float = 1.0,
    workspace: StepWorkspace | None = None,
) -> None:
    """In place: theta_i += factor * scale * z_i for every active element.

    `factor` carries the cycle's sign and multiplicity (+1, -2, +1).
    """
    spec.validate(pv.partition)
    ws = workspace if workspace is not None else StepWorkspace()
    _add_scaled_draws(pv.values, pv.partition, spec.dropped, spec.seed, factor * spec.scale, ws)


def _timed_forward(loss: LossFunction, pv: ParameterVector, batch: Batch, timer: PhaseTimer) -> float:
    started = time.perf_counter_ns()
    try:
        return loss(pv, batch)
    finally:
        timer.forward_ns += time.perf_counter_ns() - started


def _timed_perturb(
    pv: ParameterVector, spec: PerturbationSpec, factor: float, ws: StepWorkspace, timer: PhaseTimer
) -> None:
    started = time.perf_counter_ns()
    with ws.tracked():
        _add_scaled_draws(pv.values, pv.partition, spec.dropped, spec.seed, factor * spec.scale, ws)
    timer.perturb_ns += time.perf_counter_ns() - started


def _spsa_cycle(
    pv: ParameterVector, loss: LossFunction, batch: Batch, spec: PerturbationSpec,
    ws: StepWorkspace, timer: PhaseTimer,
) -> tuple[float, float, float]:
    _timed_perturb(pv, spec, 1.0, ws, timer)
    try:
        loss_plus = _timed_forward(loss, pv, batch, timer)
    except BaseException:
        _timed_perturb(pv, spec, -1.0, ws, timer)
        raise
    _timed_perturb(pv, spec, -2.0, ws, timer)
    try:
        loss_minus = _timed_forward(loss, pv, batch, timer)
    except BaseException:
        _timed_perturb(pv, spec, 1.0, ws, timer)
        raise
    _timed_perturb(pv, spec, 1.0, ws, timer)

    if not (math.isfinite(loss_plus) and math.isfinite(loss_minus)):
        raise ZoNumericError(f"Non-finite loss (loss_plus={loss_plus}, loss_minus={loss_minus})")
    projected_grad = (loss_plus - loss_minus) / (2.0 * spec.scale)
    if not math.isfinite(projected_grad):
        raise ZoNumericError(f"Non-finite projected gradient for mu={spec.scale}")
    return projected_grad, loss_plus, loss_minus


def spsa_projected_gradient(
    pv: ParameterVector, loss: LossFunction, batch: Batch, spec: PerturbationSpec,
    workspace: StepWorkspace | None = None,
) -> tuple[float, float, float]:
    """(+mu, -2mu, +mu) cycle; returns (projected_grad, loss_plus, loss_minus).

    The parameters are restored (within rounding) on return and before any
    error propagates.
    """
    spec.validate(pv.partition)
    ws = workspace if workspace is not None else StepWorkspace()
    return _spsa_cycle(pv, loss, batch, spec, ws, PhaseTimer())


def _zo_step(
    pv: ParameterVector, loss: LossFunction, batch: Batch, cfg: OptimizerConfig, t: int,
    drop_count: int, ws: StepWorkspace,
) -> StepRecord:
    if not 0 <= t < cfg.steps:
        raise SpecError(f"Step {t} outside [0, {cfg.steps})")
    if pv.partition != loss.partition:
        raise SpecError("Parameter partition does not match the loss function's partition")

    timer = PhaseTimer()
    ledger = ws.ledger
    step_started = time.perf_counter_ns()
    ledger.begin_step()

    with ledger.track():
        dropped = select_dropped_layers(
            pv.partition.num_layers, drop_count, derive_seed(cfg.base_seed, SeedPurpose.LAYER_SELECT, t)
        )
        spec = PerturbationSpec(
            seed=derive_seed(cfg.base_seed, SeedPurpose.PERTURBATION, t), scale=cfg.mu, dropped=dropped
        )
    projected_grad, loss_plus, loss_minus = _spsa_cycle(pv, loss, batch, spec, ws, timer)

    started = time.perf_counter_ns()
    with ledger.track():
        _add_scaled_draws(
            pv.values, pv.partition, dropped, spec.seed, -(cfg.learning_rate * projected_grad), ws
        )
    timer.update_ns += time.perf_counter_ns() - started
    total_ns = time.perf_counter_ns() - step_started

    record = StepRecord(
        step=t,
        loss_plus=loss_plus,
        loss_minus=loss_minus,
        projected_grad=projected_grad,
        dropped=dropped,
        time_forward_ns=timer.forward_ns,
        time_perturb_ns=timer.perturb_ns,
        time_update_ns=timer.update_ns,
        time_total_ns=total_ns,
        alloc_delta_bytes=step_allocation_delta(ledger),
    )
    _LOGGER.debug(
        "Step %d: dropped=%s loss+=%.6g loss-=%.6g g=%.6g", t, sorted(dropped), loss_plus, loss_minus,
        projected_grad,
    )
    return record


def lezo_step(
    pv: ParameterVector, loss: LossFunction, batch: Batch, cfg: OptimizerConfig, t: int,
    workspace: StepWorkspace | None = None,
) -> StepRecord:
    """One LeZO-SGD step: drop cfg.drop_count random layers, SPSA, seeded sparse update."""
    drop_count = cfg.validate(pv.partition.num_layers)
    ws = workspace if workspace is not None else StepWorkspace()
    return _zo_step(pv, loss, batch, cfg, t, drop_count, ws)


def mezo_step(
    pv: ParameterVector, loss: LossFunction, batch: Batch, cfg: OptimizerConfig, t: int,
    workspace: StepWorkspace | None = None,
) -> StepRecord:
    """One dense ZO-SGD step; the dropped set is always empty."""
    cfg.validate(pv.partition.num_layers)
    ws = workspace if workspace is not None else StepWorkspace()
    return _zo_step(pv, loss, batch, cfg, t, 0, ws)


def _difference_quotient(
    values: np.ndarray, loss: LossFunction, batch: Batch, mu: float, z: np.ndarray
) -> float:
    loss_plus = loss(values + mu * z, batch)
    loss_minus = loss(values - mu * z, batch)
    if not (math.isfinite(loss_plus) and math.isfinite(loss_minus)):
        raise ZoNumericError(f"Non-finite loss (loss_plus={loss_plus}, loss_minus={loss_minus})")
    return (loss_plus - loss_minus) / (2.0 * mu)


def estimate_gradient_dense(
    pv: ParameterVector, loss: LossFunction, batch: Batch, mu: float, z: np.ndarray
) -> np.ndarray:
    """Full d-vector SPSA estimate with an explicit direction z; pv is not touched."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (pv.d,):
        raise SpecError(f"Direction has shape {z.shape}, expected ({pv.d},)")
    if not (math.isfinite(mu) and mu > 0):
        raise SpecError(f"mu must be finite and > 0, got {mu}")
    values = np.asarray(pv.values, dtype=np.float64)
    return _difference_quotient(values, loss, batch, mu, z) * z


def scatter_active(partition: LayerPartition, dropped: Iterable[int], z_active: np.ndarray) -> np.ndarray:
    """Place active-coordinate values into a zero d-vector in canonical order."""
    dropped = frozenset(dropped)
    full = np.zeros(partition.total_len)
    cursor = 0
    for offset, length in partition.active_ranges(dropped):
        full[offset : offset + length] = z_active[cursor : cursor + length]
        cursor += length
    return full


def estimate_gradient_sparse(
    pv: ParameterVector, loss: LossFunction, batch: Batch, mu: float, z_active: np.ndarray,
    dropped: Iterable[int],
) -> np.ndarray:
    """Layer-wise sparse SPSA estimate; exactly zero on dropped-layer coordinates."""
    dropped = frozenset(dropped)
    try:
        pv.partition.check_dropped(dropped)
    except PartitionError as err:
        raise SpecError(str(err)) from err
    z_active = np.asarray(z_active, dtype=np.float64)
    active = pv.partition.active_count(dropped)
    if z_active.shape != (active,):
        raise SpecError(f"Active direction has shape {z_active.shape}, expected ({active},)")
    return estimate_gradient_dense(pv, loss, batch, mu, scatter_active(pv.partition, dropped, z_active))


class ZoOptimizer:
    """Owns the reusable stream, scratch buffer and allocation ledger for one run."""

    def __init__(
        self,
        loss: LossFunction,
        cfg: OptimizerConfig,
        *,
        sparse: bool = True,
        observer: AllocationObserver | None = None,
        block: int = STREAM_BLOCK,
    ) -> None:
        self.loss = loss
        self.cfg = cfg
        resolved = cfg.validate(loss.num_layers)
        self.drop_count = resolved if sparse else 0
        self.workspace = StepWorkspace(ledger=AllocationLedger(observer), block=block)

    @property
    def keep_fraction(self) -> float:
        """Expected fraction of parameters active per step."""
        partition = self.loss.partition
        if partition.total_len == 0:
            return 0.0
        fixed = sum(length for _, length in partition.always_active)
        layered = partition.total_len - fixed
        kept = layered * (partition.num_layers - self.drop_count) / partition.num_layers if partition.num_layers else 0
        return (fixed + kept) / partition.total_len

    def step(self, pv: ParameterVector, batch: Batch, t: int) -> StepRecord:
        return _zo_step(pv, self.loss, batch, self.cfg, t, self.drop_count, self.workspace)
