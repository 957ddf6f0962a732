"""Two-layer tanh MLP classifier."""

from __future__ import annotations

import numpy as np

from ..core.params import ParameterVector, build_partition
from ..core.rng import GaussianStream
from .base import Batch, LossFunction, ModelError, cross_entropy


class MlpLoss(LossFunction):
    """Layout: [W1 (H x F), b1] is layer 0, [W2 (C x H), b2] is layer 1; nothing always-active."""

    name = "mlp"
    classifier = True

    def __init__(self, feature_dim: int, hidden: int, num_classes: int, seed: int) -> None:
        if min(feature_dim, hidden, num_classes) < 1:
            raise ModelError(
                f"Sizes must be >= 1 (feature_dim={feature_dim}, hidden={hidden}, num_classes={num_classes})"
            )
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.num_classes = num_classes
        super().__init__(
            build_partition([hidden * feature_dim + hidden, num_classes * hidden + num_classes], 0),
            seed,
        )

    def _unpack(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        f, h, c = self.feature_dim, self.hidden, self.num_classes
        cursor = 0
        w1 = values[cursor : cursor + h * f].reshape(h, f)
        cursor += h * f
        b1 = values[cursor : cursor + h]
        cursor += h
        w2 = values[cursor : cursor + c * h].reshape(c, h)
        cursor += c * h
        b2 = values[cursor : cursor + c]
        return w1, b1, w2, b2

    def initial_parameters(self, dtype: np.dtype | type = np.float64) -> ParameterVector:
        pv = ParameterVector.zeros(self.partition, dtype=dtype)
        w1, _, w2, _ = self._unpack(pv.values)
        stream = GaussianStream(self.seed)
        w1[:] = stream.fill(np.empty(w1.size)).reshape(w1.shape) / np.sqrt(self.feature_dim)
        w2[:] = stream.fill(np.empty(w2.size)).reshape(w2.shape) / np.sqrt(self.hidden)
        return pv

    def _activations(self, values: np.ndarray, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w1, b1, w2, b2 = self._unpack(values)
        hidden = np.tanh(inputs @ w1.T + b1)
        return hidden, hidden @ w2.T + b2

    def _forward(self, values: np.ndarray, batch: Batch) -> float:
        _, logits = self._activations(values, batch.inputs)
        loss, _ = cross_entropy(logits, batch.labels)
        return loss

    def _gradient(self, values: np.ndarray, batch: Batch) -> np.ndarray:
        _, _, w2, _ = self._unpack(values)
        hidden, logits = self._activations(values, batch.inputs)
        _, dlogits = cross_entropy(logits, batch.labels)
        grad = np.zeros_like(values)
        gw1, gb1, gw2, gb2 = self._unpack(grad)
        gw2[:] = dlogits.T @ hidden
        gb2[:] = dlogits.sum(axis=0)
        dpre = (dlogits @ w2) * (1.0 - hidden**2)
        gw1[:] = dpre.T @ batch.inputs
        gb1[:] = dpre.sum(axis=0)
        return grad

    def predict(self, theta, batch: Batch) -> np.ndarray:
        values = theta.values if isinstance(theta, ParameterVector) else theta
        return self._activations(values, batch.inputs)[1].argmax(axis=1)


def make_mlp(feature_dim: int, hidden: int, num_classes: int, seed: int = 0) -> MlpLoss:
    return MlpLoss(feature_dim, hidden, num_classes, seed)
