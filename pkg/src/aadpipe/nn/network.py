"""Sequential container with finiteness checks and state (de)serialization."""

from __future__ import annotations

import numpy as np

from .layers import Layer, Parameter, Tensor


class Network:
    """An ordered stack of layers with a train/eval mode flag.

    ``forward`` validates that every layer output is finite (NaN/Inf is a
    hard error) and leaves each layer's cache populated so ``backward`` can
    run immediately afterwards.
    """

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        self.training = True
        self._forward_done = False

    def train(self) -> "Network":
        self.training = True
        return self

    def eval(self) -> "Network":
        self.training = False
        return self

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            x = layer.forward(x, train=self.training)
            if not np.isfinite(x).all():
                raise FloatingPointError(f"non-finite values after {layer!r}")
        self._forward_done = True
        return x

    __call__ = forward

    def backward(self, grad: Tensor) -> Tensor:
        if not self._forward_done:
            raise RuntimeError("backward called before forward")
        grad = np.asarray(grad, dtype=np.float64)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        for p in self.parameters():
            if not np.isfinite(p.grad).all():
                raise FloatingPointError("non-finite parameter gradient")
        return grad

    def activations(self, x: Tensor) -> list[Tensor]:
        """Inputs seen by each layer plus the final output, in order.

        Runs in the network's current mode; used by the attribution engine,
        which needs per-layer activations for both the sample and baseline.
        """
        acts = [np.asarray(x, dtype=np.float64)]
        for layer in self.layers:
            acts.append(layer.forward(acts[-1], train=self.training))
        return acts

    def state_dict(self) -> dict[str, np.ndarray]:
        state: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            for p in layer.parameters():
                state[f"layer{i}.{p.name}"] = p.value.copy()
            if hasattr(layer, "running_mean"):
                state[f"layer{i}.running_mean"] = layer.running_mean.copy()
                state[f"layer{i}.running_var"] = layer.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for p in layer.parameters():
                p.value[...] = state[f"layer{i}.{p.name}"]
            if hasattr(layer, "running_mean"):
                layer.running_mean[...] = state[f"layer{i}.running_mean"]
                layer.running_var[...] = state[f"layer{i}.running_var"]

    def __repr__(self):
        inner = ", ".join(repr(l) for l in self.layers)
        return f"Network([{inner}])"
