"""Layers with explicit forward/backward passes.

Everything runs in float64. Each layer caches whatever its backward pass
needs during forward; ``backward`` accumulates parameter gradients in place
and returns the gradient with respect to the layer input. Layers whose
eval-mode map is affine additionally expose ``input_grad``, a pure function
of the upstream gradient (used both by training and by the attribution
engine, which backpropagates multipliers instead of gradients).
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray


class Parameter:
    """A learnable array paired with its accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.value.shape})"


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Fan-in scaled uniform init, U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base class. ``is_affine`` marks layers whose eval-mode map is affine."""

    is_affine = False

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, x: Tensor, train: bool = False) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor) -> Tensor:
        raise NotImplementedError

    def input_grad(self, grad_out: Tensor, x_ref: Tensor) -> Tensor:
        """Pull ``grad_out`` back through the layer's affine map.

        ``x_ref`` is only consulted for its shape; the result does not depend
        on activation values. Non-affine layers do not implement this.
        """
        raise NotImplementedError(f"{type(self).__name__} is not affine")

    def __repr__(self) -> str:
        return type(self).__name__


class Linear(Layer):
    """y = x @ W.T + b for 2-D inputs (batch, in_features)."""

    is_affine = True

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter("weight", kaiming_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter("bias", np.zeros(out_features))
        self._x: Tensor | None = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"Linear expects (batch, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def input_grad(self, grad_out, x_ref=None):
        return grad_out @ self.weight.value

    def backward(self, grad_out):
        self.weight.grad += grad_out.T @ self._x
        self.bias.grad += grad_out.sum(axis=0)
        return self.input_grad(grad_out)

    def __repr__(self):
        return f"Linear({self.in_features}->{self.out_features})"


class Conv2d(Layer):
    """2-D convolution (cross-correlation), weight (out_ch, in_ch, kh, kw).

    Implemented as one matmul per kernel tap to keep all heavy lifting in
    BLAS with a fixed reduction order.
    """

    is_affine = True

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(
            "weight", kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter("bias", np.zeros(out_channels))
        self._xp: Tensor | None = None

    def parameters(self):
        return [self.weight, self.bias]

    def _out_hw(self, h, w):
        k, s, p = self.kernel_size, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"Conv2d expects (batch, {self.in_channels}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = self._out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        self._xp = xp
        y = np.zeros((b, self.out_channels, ho, wo))
        wv = self.weight.value
        for u in range(k):
            for v in range(k):
                sl = xp[:, :, u:u + (ho - 1) * s + 1:s, v:v + (wo - 1) * s + 1:s]
                y += np.matmul(wv[:, :, u, v], sl.reshape(b, self.in_channels, ho * wo)).reshape(y.shape)
        y += self.bias.value[None, :, None, None]
        return y

    def _grad_padded_input(self, grad_out, b, hp, wp):
        k, s = self.kernel_size, self.stride
        ho, wo = grad_out.shape[2], grad_out.shape[3]
        g2 = grad_out.reshape(b, self.out_channels, ho * wo)
        dxp = np.zeros((b, self.in_channels, hp, wp))
        wv = self.weight.value
        for u in range(k):
            for v in range(k):
                dsl = np.matmul(wv[:, :, u, v].T, g2).reshape(b, self.in_channels, ho, wo)
                dxp[:, :, u:u + (ho - 1) * s + 1:s, v:v + (wo - 1) * s + 1:s] += dsl
        return dxp

    def input_grad(self, grad_out, x_ref):
        b, _, h, w = x_ref.shape
        p = self.padding
        dxp = self._grad_padded_input(grad_out, grad_out.shape[0], h + 2 * p, w + 2 * p)
        return dxp[:, :, p:p + h, p:p + w] if p else dxp

    def backward(self, grad_out):
        xp = self._xp
        if xp is None:
            raise RuntimeError("backward called before forward")
        b = xp.shape[0]
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = grad_out.shape[2], grad_out.shape[3]
        for u in range(k):
            for v in range(k):
                sl = xp[:, :, u:u + (ho - 1) * s + 1:s, v:v + (wo - 1) * s + 1:s]
                self.weight.grad[:, :, u, v] += np.tensordot(grad_out, sl, axes=([0, 2, 3], [0, 2, 3]))
        self.bias.grad += grad_out.sum(axis=(0, 2, 3))
        dxp = self._grad_padded_input(grad_out, b, xp.shape[2], xp.shape[3])
        h, w = xp.shape[2] - 2 * p, xp.shape[3] - 2 * p
        return dxp[:, :, p:p + h, p:p + w] if p else dxp

    def __repr__(self):
        return (f"Conv2d({self.in_channels}->{self.out_channels}, k={self.kernel_size}, "
                f"s={self.stride}, p={self.padding})")


class Conv1dDilated(Layer):
    """Dilated 1-D convolution, stride 1, 'same' padding, odd kernel.

    Input (batch, in_ch, T) -> output (batch, out_ch, T); padding is
    dilation*(k-1)/2 per side so the time axis is preserved.
    """

    is_affine = True

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, dilation: int = 1):
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd for 'same' padding")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.dilation = dilation
        self.padding = dilation * (kernel_size - 1) // 2
        fan_in = in_channels * kernel_size
        self.weight = Parameter("weight", kaiming_uniform(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter("bias", np.zeros(out_channels))
        self._xp: Tensor | None = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ValueError(f"Conv1dDilated expects (batch, {self.in_channels}, T), got {x.shape}")
        b, _, t = x.shape
        p, d = self.padding, self.dilation
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        self._xp = xp
        y = np.zeros((b, self.out_channels, t))
        wv = self.weight.value
        for k in range(self.kernel_size):
            y += np.matmul(wv[:, :, k], xp[:, :, k * d:k * d + t])
        y += self.bias.value[None, :, None]
        return y

    def input_grad(self, grad_out, x_ref):
        b, _, t = x_ref.shape[0], x_ref.shape[1], x_ref.shape[2]
        b = grad_out.shape[0]
        p, d = self.padding, self.dilation
        dxp = np.zeros((b, self.in_channels, t + 2 * p))
        wv = self.weight.value
        for k in range(self.kernel_size):
            dxp[:, :, k * d:k * d + t] += np.matmul(wv[:, :, k].T, grad_out)
        return dxp[:, :, p:p + t]

    def backward(self, grad_out):
        xp = self._xp
        if xp is None:
            raise RuntimeError("backward called before forward")
        t = grad_out.shape[2]
        d = self.dilation
        for k in range(self.kernel_size):
            self.weight.grad[:, :, k] += np.tensordot(grad_out, xp[:, :, k * d:k * d + t],
                                                      axes=([0, 2], [0, 2]))
        self.bias.grad += grad_out.sum(axis=(0, 2))
        return self.input_grad(grad_out, xp[:, :, self.padding:self.padding + t])

    def __repr__(self):
        return (f"Conv1dDilated({self.in_channels}->{self.out_channels}, "
                f"k={self.kernel_size}, d={self.dilation})")


class BatchNorm(Layer):
    """Batch normalization over all axes except the feature axis (axis 1).

    Train mode uses batch statistics and updates running stats with momentum
    0.1; eval mode applies the running stats, which makes the layer a fixed
    affine map (the attribution engine relies on this).
    """

    is_affine = True  # eval mode only

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter("gamma", np.ones(num_features))
        self.beta = Parameter("beta", np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self._cache = None

    def parameters(self):
        return [self.gamma, self.beta]

    def _bshape(self, ndim):
        return (1, self.num_features) + (1,) * (ndim - 2)

    def forward(self, x, train=False):
        if x.ndim < 2 or x.shape[1] != self.num_features:
            raise ValueError(f"BatchNorm({self.num_features}) got shape {x.shape}")
        axes = (0,) + tuple(range(2, x.ndim))
        bs = self._bshape(x.ndim)
        if train:
            if x.shape[0] < 2:
                raise ValueError("BatchNorm in train mode needs batch size >= 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            self.running_var = (1 - m) * self.running_var + m * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bs)) * inv_std.reshape(bs)
        n = x.size // self.num_features
        self._cache = (xhat, inv_std, axes, n, train)
        return self.gamma.value.reshape(bs) * xhat + self.beta.value.reshape(bs)

    def input_grad(self, grad_out, x_ref=None):
        bs = self._bshape(grad_out.ndim)
        scale = self.gamma.value / np.sqrt(self.running_var + self.eps)
        return grad_out * scale.reshape(bs)

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        xhat, inv_std, axes, n, train = self._cache
        bs = self._bshape(grad_out.ndim)
        self.gamma.grad += (grad_out * xhat).sum(axis=axes)
        self.beta.grad += grad_out.sum(axis=axes)
        if not train:
            return self.input_grad(grad_out)
        g = grad_out * self.gamma.value.reshape(bs)
        s1 = g.sum(axis=axes).reshape(bs)
        s2 = (g * xhat).sum(axis=axes).reshape(bs)
        return (inv_std.reshape(bs) / n) * (n * g - s1 - xhat * s2)

    def __repr__(self):
        return f"BatchNorm({self.num_features})"


class ReLU(Layer):
    """max(x, 0). Not affine; the attribution engine handles it specially."""

    def __init__(self):
        self._mask: Tensor | None = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out):
        return grad_out * self._mask


class AvgPool2d(Layer):
    """Non-overlapping k x k mean pooling (stride = kernel)."""

    is_affine = True

    def __init__(self, kernel_size: int):
        self.kernel_size = kernel_size

    def forward(self, x, train=False):
        b, c, h, w = x.shape
        k = self.kernel_size
        ho, wo = h // k, w // k
        self._in_hw = (h, w)
        return x[:, :, :ho * k, :wo * k].reshape(b, c, ho, k, wo, k).mean(axis=(3, 5))

    def input_grad(self, grad_out, x_ref):
        h, w = x_ref.shape[2], x_ref.shape[3]
        b, c, ho, wo = grad_out.shape
        k = self.kernel_size
        dx = np.zeros((b, c, h, w))
        g = grad_out[:, :, :, None, :, None] / (k * k)
        dx[:, :, :ho * k, :wo * k] = np.broadcast_to(g, (b, c, ho, k, wo, k)).reshape(b, c, ho * k, wo * k)
        return dx

    def backward(self, grad_out):
        b, c = grad_out.shape[0], grad_out.shape[1]
        ref = np.empty((b, c) + self._in_hw)
        return self.input_grad(grad_out, ref)

    def __repr__(self):
        return f"AvgPool2d({self.kernel_size})"


class AdaptiveAvgPool1d(Layer):
    """Mean pooling of (batch, ch, T) down to (batch, ch, output_size)."""

    is_affine = True

    def __init__(self, output_size: int = 1):
        self.output_size = output_size

    def _bins(self, t):
        o = self.output_size
        return [(i * t // o, -(-(i + 1) * t // o)) for i in range(o)]

    def forward(self, x, train=False):
        self._t = x.shape[2]
        cols = [x[:, :, a:b].mean(axis=2) for a, b in self._bins(x.shape[2])]
        return np.stack(cols, axis=2)

    def input_grad(self, grad_out, x_ref):
        t = x_ref.shape[2]
        dx = np.zeros((grad_out.shape[0], grad_out.shape[1], t))
        for i, (a, b) in enumerate(self._bins(t)):
            dx[:, :, a:b] += grad_out[:, :, i:i + 1] / (b - a)
        return dx

    def backward(self, grad_out):
        ref = np.empty((1, 1, self._t))
        return self.input_grad(grad_out, ref)

    def __repr__(self):
        return f"AdaptiveAvgPool1d({self.output_size})"


class Flatten(Layer):
    """(batch, ...) -> (batch, prod(...))."""

    is_affine = True

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def input_grad(self, grad_out, x_ref):
        return grad_out.reshape((grad_out.shape[0],) + x_ref.shape[1:])

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)


class Transpose12(Layer):
    """(batch, T, C) -> (batch, C, T) adapter for time-major inputs."""

    is_affine = True

    def forward(self, x, train=False):
        if x.ndim != 3:
            raise ValueError(f"Transpose12 expects a 3-D input, got {x.shape}")
        return np.ascontiguousarray(x.transpose(0, 2, 1))

    def input_grad(self, grad_out, x_ref=None):
        return np.ascontiguousarray(grad_out.transpose(0, 2, 1))

    def backward(self, grad_out):
        return self.input_grad(grad_out)
