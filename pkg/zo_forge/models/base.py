"""Forward-only objectives over a flat parameter vector."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..core.params import LayerPartition, ParameterVector


class ModelError(ValueError):
    """Invalid model configuration."""


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.inputs.shape[0] < 1:
            raise ModelError("A batch needs at least one row")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ModelError(
                f"Row count {self.inputs.shape[0]} does not match label count {self.labels.shape[0]}"
            )

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


def _values(theta: ParameterVector | np.ndarray) -> np.ndarray:
    return theta.values if isinstance(theta, ParameterVector) else theta


class LossFunction(ABC):
    """L(theta; B) -> scalar. Immutable after construction.

    `analytic_gradient` exists for the oracle module only; optimizer code must
    stay forward-only.
    """

    name: str = "loss"
    classifier: bool = False

    def __init__(self, partition: LayerPartition, seed: int) -> None:
        self.partition = partition
        self.seed = seed

    @property
    def d(self) -> int:
        return self.partition.total_len

    @property
    def num_layers(self) -> int:
        return self.partition.num_layers

    def evaluate(self, theta: ParameterVector | np.ndarray, batch: Batch) -> float:
        return float(self._forward(_values(theta), batch))

    __call__ = evaluate

    def analytic_gradient(self, theta: ParameterVector | np.ndarray, batch: Batch) -> np.ndarray:
        return self._gradient(np.asarray(_values(theta), dtype=np.float64), batch)

    def predict(self, theta: ParameterVector | np.ndarray, batch: Batch) -> np.ndarray:
        raise NotImplementedError(f"{self.name} is not a classifier")

    def accuracy(self, theta: ParameterVector | np.ndarray, batch: Batch) -> float:
        return float(np.mean(self.predict(theta, batch) == batch.labels))

    @abstractmethod
    def initial_parameters(self, dtype: np.dtype | type = np.float64) -> ParameterVector:
        """Seeded starting point."""

    @abstractmethod
    def _forward(self, values: np.ndarray, batch: Batch) -> float: ...

    @abstractmethod
    def _gradient(self, values: np.ndarray, batch: Batch) -> np.ndarray: ...

    def metadata(self) -> dict[str, object]:
        return {"name": self.name, "d": self.d, "N": self.num_layers}


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    log_probs = log_softmax(logits)
    rows = np.arange(labels.shape[0])
    loss = -float(log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    grad /= labels.shape[0]
    return loss, grad
