"""Attribution: DeepLIFT multipliers, background-averaged SHAP, exact oracle.

The engine walks the network backwards, propagating multipliers instead of
gradients. Affine layers (linear, conv, pooling, eval-mode batch norm) pass
multipliers through their transposed linear map; ReLU uses the rescale rule
m = (f(a) - f(a0)) / (a - a0), falling back to the derivative at the midpoint
when the input delta is numerically zero. The attribution of input feature i
is its multiplier times (x_i - baseline_i), so per-baseline attributions sum
to f(x) - f(baseline).
"""

from __future__ import annotations

import math

import numpy as np

from . import nn
from .topomap import ElectrodeLayout, pixels_to_channels

RESCALE_EPS = 1e-7


def _relu_multiplier(m, a_x, a_b):
    """Rescale-rule multiplier through a ReLU, broadcasting x against baselines."""
    dx = a_x - a_b
    dy = np.maximum(a_x, 0.0) - np.maximum(a_b, 0.0)
    mid = 0.5 * (a_x + a_b) > 0
    ratio = np.divide(dy, dx, out=mid.astype(np.float64), where=np.abs(dx) > RESCALE_EPS)
    return m * ratio


def _attribute_batch(net: nn.Network, x: np.ndarray, baselines: np.ndarray,
                     baseline_acts: list[np.ndarray] | None = None) -> np.ndarray:
    """Per-baseline attributions, shape (n_baselines,) + x.shape."""
    if net.training:
        raise RuntimeError("attribution requires the network in eval mode")
    acts_x = net.activations(x[None])
    acts_b = baseline_acts if baseline_acts is not None else net.activations(baselines)
    m = np.ones_like(acts_b[-1])
    for layer, a_x, a_b in zip(reversed(net.layers), reversed(acts_x[:-1]), reversed(acts_b[:-1])):
        if isinstance(layer, nn.ReLU):
            m = _relu_multiplier(m, a_x, a_b)
        elif layer.is_affine:
            m = layer.input_grad(m, a_b)
        else:
            raise TypeError(f"cannot propagate multipliers through {layer!r}")
    return m * (x[None] - baselines)


def deeplift_attribute(net: nn.Network, x: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    """Attribution of the logit to each input feature against one baseline."""
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    if x.shape != baseline.shape:
        raise ValueError("input and baseline shapes differ")
    return _attribute_batch(net, x, baseline[None])[0]


def deepshap_attribute(net: nn.Network, x: np.ndarray, backgrounds: np.ndarray) -> np.ndarray:
    """Mean DeepLIFT attribution over a background set of baselines."""
    backgrounds = np.asarray(backgrounds, dtype=np.float64)
    if backgrounds.ndim == np.asarray(x).ndim:
        backgrounds = backgrounds[None]
    if backgrounds.shape[0] == 0:
        raise ValueError("background set must be non-empty")
    return _attribute_batch(net, np.asarray(x, dtype=np.float64), backgrounds).mean(axis=0)


class DeepShapExplainer:
    """Caches the background forward passes; attribute() per sample."""

    def __init__(self, net: nn.Network, backgrounds: np.ndarray):
        if net.training:
            raise RuntimeError("attribution requires the network in eval mode")
        backgrounds = np.asarray(backgrounds, dtype=np.float64)
        if backgrounds.shape[0] == 0:
            raise ValueError("background set must be non-empty")
        self.net = net
        self.backgrounds = backgrounds
        self._acts_b = net.activations(backgrounds)

    def attribute(self, x: np.ndarray) -> np.ndarray:
        return _attribute_batch(self.net, np.asarray(x, dtype=np.float64),
                                self.backgrounds, self._acts_b).mean(axis=0)


def exact_shapley(blackbox, x: np.ndarray, baseline: np.ndarray, max_features: int = 12) -> np.ndarray:
    """Exact Shapley values by full subset enumeration.

    ``blackbox`` maps a (m, n) batch of inputs to (m,) scalars. The value of
    a coalition S is blackbox(x restricted to S, baseline elsewhere); weights
    are the classic |S|! (n-|S|-1)! / n!. Refuses n > max_features.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    baseline = np.asarray(baseline, dtype=np.float64).ravel()
    n = x.size
    if n > max_features:
        raise ValueError(f"{n} features need 2^{n} evaluations; limit is {max_features}")
    masks = np.arange(2 ** n, dtype=np.int64)
    bits = (masks[:, None] >> np.arange(n)) & 1
    points = np.where(bits.astype(bool), x, baseline)
    values = np.asarray(blackbox(points), dtype=np.float64).ravel()
    sizes = bits.sum(axis=1)
    fact = [math.factorial(k) for k in range(n + 1)]
    weights = np.array([fact[s] * fact[n - s - 1] / fact[n] if s < n else 0.0
                        for s in range(n + 1)])
    phi = np.empty(n)
    for i in range(n):
        without = masks[bits[:, i] == 0]
        gains = values[without | (1 << i)] - values[without]
        phi[i] = (weights[sizes[without]] * gains).sum()
    return phi


def global_importance(maps: np.ndarray) -> np.ndarray:
    """Element-wise mean of absolute attributions over all (sample, fold) maps."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim < 3 or maps.shape[0] == 0:
        raise ValueError("expected a non-empty stack of maps")
    return np.abs(maps).mean(axis=0)


class ChannelRanking:
    """Channels sorted by descending score; ties break on layout index."""

    def __init__(self, names: list[str], scores: np.ndarray):
        order = sorted(range(len(names)), key=lambda i: (-scores[i], i))
        self.entries = [(names[i], float(scores[i])) for i in order]

    def top(self, k: int) -> list[str]:
        return [name for name, _ in self.entries[:k]]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def rank_channels(global_map: np.ndarray, layout: ElectrodeLayout, k: int | None = None) -> ChannelRanking:
    """Aggregate a pixel importance map to channels and rank them.

    Returns the full ranking; use ``.top(k)`` for the selected prefix.
    """
    if k is not None and not 1 <= k <= layout.n_channels:
        raise ValueError(f"k must be in 1..{layout.n_channels}")
    scores = pixels_to_channels(global_map, layout)
    return ChannelRanking(layout.names, scores)
