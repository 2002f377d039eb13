"""Concrete classifier architectures and analytic complexity counters."""

from __future__ import annotations

import math

import numpy as np

from . import nn

IMAGE_SIZE = 32
WINDOW_SAMPLES = 1280  # 10 s at 128 Hz


def build_cnn(seed: int = 0) -> nn.Network:
    """Image classifier: one conv block, then a three-layer MLP head.

    Input (batch, 1, 32, 32) -> single logit. Conv: 32 filters, 3x3 kernel,
    stride 1, padding 1; BN + ReLU + 2x2 average pooling; flatten to 8192;
    8192 -> 128 -> 64 -> 1.
    """
    rng = np.random.default_rng(seed)
    return nn.Network([
        nn.Conv2d(1, 32, 3, rng, stride=1, padding=1),
        nn.BatchNorm(32),
        nn.ReLU(),
        nn.AvgPool2d(2),
        nn.Flatten(),
        nn.Linear(32 * 16 * 16, 128, rng),
        nn.ReLU(),
        nn.Linear(128, 64, rng),
        nn.ReLU(),
        nn.Linear(64, 1, rng),
    ])


def build_tcn(n_channels: int, seed: int = 0) -> nn.Network:
    """Temporal ConvNet on raw signals, input (batch, T, channels) -> logit.

    Two dilated 1-D conv blocks (kernel 7, dilations 1 and 2, 128 feature
    maps, 'same' padding so T is preserved), global average pooling over
    time, then a light 128 -> 64 -> 1 head.
    """
    if not 1 <= n_channels <= 64:
        raise ValueError(f"n_channels must be in 1..64, got {n_channels}")
    rng = np.random.default_rng(seed)
    return nn.Network([
        nn.Transpose12(),
        nn.Conv1dDilated(n_channels, 128, 7, rng, dilation=1),
        nn.BatchNorm(128),
        nn.ReLU(),
        nn.Conv1dDilated(128, 128, 7, rng, dilation=2),
        nn.BatchNorm(128),
        nn.ReLU(),
        nn.AdaptiveAvgPool1d(1),
        nn.Flatten(),
        nn.Linear(128, 64, rng),
        nn.ReLU(),
        nn.Linear(64, 1, rng),
    ])


def count_params(net: nn.Network) -> int:
    """Learnable parameter elements (BN running stats are not parameters)."""
    return sum(p.value.size for p in net.parameters())


def count_macs(net: nn.Network, t: int = WINDOW_SAMPLES, include_classifier: bool = False) -> int:
    """Multiply-accumulates per sample for a time-series network.

    Counts the stride-1 same-padding 1-D convolutions (in_ch*out_ch*k*T
    each); ``include_classifier`` adds the dense layers (in*out each).
    Pooling and normalization are not counted.
    """
    total = 0
    for layer in net.layers:
        if isinstance(layer, nn.Conv1dDilated):
            total += layer.in_channels * layer.out_channels * layer.kernel_size * t
        elif isinstance(layer, nn.Conv2d):
            raise TypeError("count_macs covers 1-D (time-series) networks only")
        elif isinstance(layer, nn.Linear) and include_classifier:
            total += layer.in_features * layer.out_features
    return total


def mmacs_rounded(macs: int) -> int:
    # Reported at 1 MMAC resolution; exact halves at the 0.01 M grid round
    # down (183.50 -> 183), matching the reference complexity figures.
    hundredths = math.floor(macs / 1e4) / 100.0
    return math.ceil(hundredths - 0.5)


def complexity_table(budgets=(64, 48, 32, 16, 8), t: int = WINDOW_SAMPLES):
    """Rows of (channels, params, params_M_rounded, macs, mmacs_rounded)."""
    rows = []
    for c in budgets:
        net = build_tcn(c)
        params = count_params(net)
        macs = count_macs(net, t)
        rows.append((c, params, f"{params / 1e6:.2f}", macs, mmacs_rounded(macs)))
    return rows
