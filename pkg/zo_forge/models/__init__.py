"""Forward-only objectives and datasets."""

from __future__ import annotations

from .base import Batch, LossFunction, ModelError, cross_entropy, log_softmax
from .data import (
    Dataset,
    DatasetError,
    DatasetParseError,
    DatasetSpec,
    load_dataset,
    quantize_tokens,
    sample_batch,
    split_dataset,
    tokenize_text,
)
from .logistic import LogisticLoss, make_logistic
from .mlp import MlpLoss, make_mlp
from .quadratic import QuadraticLoss, make_quadratic
from .transformer import TransformerLoss, make_tiny_transformer

__all__ = [
    "Batch",
    "Dataset",
    "DatasetError",
    "DatasetParseError",
    "DatasetSpec",
    "LogisticLoss",
    "LossFunction",
    "MlpLoss",
    "ModelError",
    "QuadraticLoss",
    "TransformerLoss",
    "cross_entropy",
    "load_dataset",
    "log_softmax",
    "make_logistic",
    "make_mlp",
    "make_quadratic",
    "make_tiny_transformer",
    "quantize_tokens",
    "sample_batch",
    "split_dataset",
    "tokenize_text",
]
