"""Zeroth-order optimization: SPSA, MeZO-style ZO-SGD and layer-wise sparse LeZO."""

from __future__ import annotations

from .engine import (
    OptimizerConfig,
    PerturbationSpec,
    SpecError,
    StepRecord,
    ZoNumericError,
    ZoOptimizer,
    estimate_gradient_dense,
    estimate_gradient_sparse,
    lezo_step,
    mezo_step,
    perturb_parameters,
    select_dropped_layers,
    spsa_projected_gradient,
)

__all__ = [
    "OptimizerConfig",
    "PerturbationSpec",
    "SpecError",
    "StepRecord",
    "ZoNumericError",
    "ZoOptimizer",
    "estimate_gradient_dense",
    "estimate_gradient_sparse",
    "lezo_step",
    "mezo_step",
    "perturb_parameters",
    "select_dropped_layers",
    "spsa_projected_gradient",
]
