"""Minimal deterministic neural-network engine (float64 throughout)."""

from .layers import (
    AdaptiveAvgPool1d,
    AvgPool2d,
    BatchNorm,
    Conv1dDilated,
    Conv2d,
    Flatten,
    Layer,
    Linear,
    Parameter,
    ReLU,
    Tensor,
    Transpose12,
    kaiming_uniform,
)
from .loss import bce_with_logits, sigmoid
from .network import Network
from .optim import Adam

__all__ = [
    "AdaptiveAvgPool1d", "Adam", "AvgPool2d", "BatchNorm", "Conv1dDilated",
    "Conv2d", "Flatten", "Layer", "Linear", "Network", "Parameter", "ReLU",
    "Tensor", "Transpose12", "bce_with_logits", "kaiming_uniform", "sigmoid",
]
