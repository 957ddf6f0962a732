"""Linear softmax classifier."""

from __future__ import annotations

import numpy as np

from ..core.params import ParameterVector, build_partition
from .base import Batch, LossFunction, ModelError, cross_entropy


class LogisticLoss(LossFunction):
    """Mean cross-entropy of softmax(X W^T + b).

    Layout: bias (always active), then W row-blocks, one partition layer per block.
    """

    name = "logistic"
    classifier = True

    def __init__(self, feature_dim: int, num_classes: int, layers: int, seed: int) -> None:
        if feature_dim < 1 or num_classes < 1 or layers < 1:
            raise ModelError(
                f"Sizes must be >= 1 (feature_dim={feature_dim}, num_classes={num_classes}, layers={layers})"
            )
        if layers > num_classes:
            raise ModelError(f"Cannot split {num_classes} output rows into {layers} layers")
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        rows = [len(block) for block in np.array_split(np.arange(num_classes), layers)]
        super().__init__(build_partition([r * feature_dim for r in rows], num_classes), seed)

    def _unpack(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        bias = values[: self.num_classes]
        weights = values[self.num_classes :].reshape(self.num_classes, self.feature_dim)
        return weights, bias

    def _logits(self, values: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        weights, bias = self._unpack(values)
        return inputs @ weights.T + bias

    def initial_parameters(self, dtype: np.dtype | type = np.float64) -> ParameterVector:
        return ParameterVector.zeros(self.partition, dtype=dtype)

    def _forward(self, values: np.ndarray, batch: Batch) -> float:
        loss, _ = cross_entropy(self._logits(values, batch.inputs), batch.labels)
        return loss

    def _gradient(self, values: np.ndarray, batch: Batch) -> np.ndarray:
        _, dlogits = cross_entropy(self._logits(values, batch.inputs), batch.labels)
        grad = np.empty_like(values)
        grad[: self.num_classes] = dlogits.sum(axis=0)
        grad[self.num_classes :] = (dlogits.T @ batch.inputs).ravel()
        return grad

    def predict(self, theta, batch: Batch) -> np.ndarray:
        values = theta.values if isinstance(theta, ParameterVector) else theta
        return self._logits(values, batch.inputs).argmax(axis=1)


def make_logistic(feature_dim: int, num_classes: int, layers: int = 1, seed: int = 0) -> LogisticLoss:
    return LogisticLoss(feature_dim, num_classes, layers, seed)
