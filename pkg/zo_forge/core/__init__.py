"""Parameter storage, allocation accounting and deterministic streams."""

from .memory import AllocationLedger, TracemallocObserver, step_allocation_delta
from .params import LayerPartition, ParameterVector, build_partition, snapshot
from .rng import GaussianStream, SeedPurpose, SeedSchedule, derive_seed

__all__ = [
    "AllocationLedger",
    "GaussianStream",
    "LayerPartition",
    "ParameterVector",
    "SeedPurpose",
    "SeedSchedule",
    "TracemallocObserver",
    "build_partition",
    "derive_seed",
    "snapshot",
    "step_allocation_delta",
]
