"""Diagonal quadratic bowls L(theta) = 1/2 theta^T A theta."""

from __future__ import annotations

import numpy as np

from ..core.params import ParameterVector, build_partition
from ..core.rng import GaussianStream
from .base import Batch, LossFunction, ModelError


class QuadraticLoss(LossFunction):
    """Batch-independent quadratic with log-spaced eigenvalues in [1, condition_number]."""

    name = "quadratic"

    def __init__(self, d: int, layers: int, condition_number: float, seed: int) -> None:
        if d < 1:
            raise ModelError(f"Dimension must be >= 1, got {d}")
        if not 0 <= layers <= d:
            raise ModelError(f"Layer count {layers} must lie in [0, {d}]")
        if not condition_number >= 1.0:
            raise ModelError(f"Condition number must be >= 1, got {condition_number}")
        layer_size = d // layers if layers else 0
        remainder = d - layer_size * layers
        super().__init__(build_partition([layer_size] * layers, remainder), seed)
        self.condition_number = float(condition_number)
        self.eigenvalues = np.geomspace(1.0, self.condition_number, num=d)

    @property
    def lipschitz(self) -> float:
        return float(self.eigenvalues.max())

    def initial_parameters(self, dtype: np.dtype | type = np.float64) -> ParameterVector:
        pv = ParameterVector.zeros(self.partition, dtype=dtype)
        direction = GaussianStream(self.seed).fill(np.empty(self.d))
        pv.values[:] = direction / np.linalg.norm(direction)
        return pv

    def _forward(self, values: np.ndarray, batch: Batch) -> float:
        return 0.5 * float(np.dot(self.eigenvalues * values, values))

    def _gradient(self, values: np.ndarray, batch: Batch) -> np.ndarray:
        return self.eigenvalues * values


def make_quadratic(d: int, layers: int, condition_number: float = 1.0, seed: int = 0) -> QuadraticLoss:
    return QuadraticLoss(d, layers, condition_number, seed)
