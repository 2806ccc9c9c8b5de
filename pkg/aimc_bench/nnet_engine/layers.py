"""
Dense-tensor layers with explicit forward/backward passes.

Tensors are numpy arrays in NCHW layout. Every layer caches what its backward
pass needs during a forward call made with ``ctx.backprop`` set, so a layer
instance must not be reused twice inside one forward pass.

ExecutionHooks let the quantization, HWT and analog code change how weight
layers execute without subclassing them:

    weight(layer, w)       effective weight used by the forward pass
    activation(layer, x)   effective input of a weight layer, plus an optional
                           gradient mask (straight-through estimator)
    unit(unit, x)          full replacement of a ConvUnit/LinearUnit
    output(unit, y)        post-processing of a unit output
"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Parameter:
    __slots__ = ("name", "value", "grad")

    def __init__(self, value: np.ndarray, name: str = ""):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)


class ExecutionHooks:
    """Plain digital execution."""

    def weight(self, layer: "Module", w: np.ndarray) -> np.ndarray:
        return w

    def activation(self, layer: "Module", x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        return x, None

    def unit(self, unit: "Module", x: np.ndarray) -> Optional[np.ndarray]:
        return None

    def output(self, unit: "Module", y: np.ndarray) -> np.ndarray:
        return y


DIGITAL = ExecutionHooks()


@dataclass
class ForwardContext:
    train: bool = False
    hooks: ExecutionHooks = field(default_factory=ExecutionHooks)
    backprop: Optional[bool] = None

    def __post_init__(self):
        if self.backprop is None:
            self.backprop = self.train


class Module:
    def __init__(self, name: str = ""):
        self.name = name

    def children(self) -> List["Module"]:
        return []

    def own_parameters(self) -> List[Parameter]:
        return []

    def own_buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def parameters(self) -> List[Parameter]:
        params = list(self.own_parameters())
        for child in self.children():
            params.extend(child.parameters())
        return params

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self.children():
            yield from child.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0

    def forward(self, x: np.ndarray, ctx: ForwardContext) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def im2col(x: np.ndarray, k: int, stride: int, padding: int) -> Tuple[np.ndarray, int, int]:
    """(N, C, H, W) -> (N*Ho*Wo, C*k*k) patch matrix."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def col2im(cols: np.ndarray, x_shape: Tuple[int, ...], k: int, stride: int, padding: int,
           ho: int, wo: int) -> np.ndarray:
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    patches = cols.reshape(n, ho, wo, c, k, k)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        dx = dx[:, :, padding:padding + h, padding:padding + w]
    return dx


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding: int = 0, bias: bool = False, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, name: str = ""):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, kernel_size, kernel_size))
        self.weight = Parameter(w.astype(dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype), f"{name}.bias") if bias else None
        self._cache = None

    def own_parameters(self) -> List[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_size * self.kernel_size

    def forward(self, x, ctx):
        w = ctx.hooks.weight(self, self.weight.value)
        x_in, mask = ctx.hooks.activation(self, x)
        cols, ho, wo = im2col(x_in, self.kernel_size, self.stride, self.padding)
        wmat = w.reshape(self.out_channels, -1)
        out = cols @ wmat.T
        if self.bias is not None:
            out += self.bias.value
        if ctx.backprop:
            self._cache = (cols, wmat, x.shape, ho, wo, mask)
        n = x.shape[0]
        return np.ascontiguousarray(out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2))

    def backward(self, grad):
        cols, wmat, x_shape, ho, wo, mask = self._cache
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        self.weight.grad += (g.T @ cols).reshape(self.weight.value.shape)
        if self.bias is not None:
            self.bias.grad += g.sum(axis=0)
        dx = col2im(g @ wmat, x_shape, self.kernel_size, self.stride, self.padding, ho, wo)
        if mask is not None:
            dx = dx * mask
        return dx


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32, name: str = ""):
        super().__init__(name)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def own_parameters(self):
        return [self.gamma, self.beta]

    def own_buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def forward(self, x, ctx):
        if ctx.train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = x.size // self.channels
            unbiased = var * (m / max(m - 1, 1))
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        if ctx.backprop:
            self._cache = (xhat, inv_std, ctx.train)
        return self.gamma.value[None, :, None, None] * xhat + self.beta.value[None, :, None, None]

    def backward(self, grad):
        xhat, inv_std, batch_stats = self._cache
        axes = (0, 2, 3)
        self.gamma.grad += (grad * xhat).sum(axis=axes)
        self.beta.grad += grad.sum(axis=axes)
        dxhat = grad * self.gamma.value[None, :, None, None]
        if not batch_stats:
            return dxhat * inv_std[None, :, None, None]
        m = grad.size // self.channels
        return (inv_std[None, :, None, None] / m) * (
            m * dxhat
            - dxhat.sum(axis=axes)[None, :, None, None]
            - xhat * (dxhat * xhat).sum(axis=axes)[None, :, None, None]
        )

    def folded_scale_shift(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-channel (scale, shift) of the inference-mode affine map."""
        scale = self.gamma.value / np.sqrt(self.running_var + self.eps)
        return scale, self.beta.value - scale * self.running_mean


class ReLU(Module):
    def forward(self, x, ctx):
        mask = x > 0
        if ctx.backprop:
            self._mask = mask
        return x * mask

    def backward(self, grad):
        return grad * self._mask


class Identity(Module):
    def forward(self, x, ctx):
        return x

    def backward(self, grad):
        return grad


class Zero(Module):
    def forward(self, x, ctx):
        self._shape = x.shape
        return np.zeros_like(x)

    def backward(self, grad):
        return np.zeros(self._shape, dtype=grad.dtype)


class AvgPool2d(Module):
    """Average pooling that excludes padded positions from the divisor."""

    def __init__(self, kernel_size: int, stride: int = 1, padding: int = 0, name: str = ""):
        super().__init__(name)
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding

    def _window_sums(self, x):
        k, s, p = self.kernel_size, self.stride, self.padding
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        h, w = x.shape[2:]
        ho = (h - k) // s + 1
        wo = (w - k) // s + 1
        sums = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo].sum(axis=(-2, -1))
        return sums, ho, wo

    def forward(self, x, ctx):
        sums, ho, wo = self._window_sums(x)
        counts, _, _ = self._window_sums(np.ones((1, 1) + x.shape[2:], dtype=x.dtype))
        if ctx.backprop:
            self._cache = (x.shape, counts, ho, wo)
        return sums / counts

    def backward(self, grad):
        x_shape, counts, ho, wo = self._cache
        k, s, p = self.kernel_size, self.stride, self.padding
        n, c, h, w = x_shape
        g = grad / counts
        dx = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += g
        if p:
            dx = dx[:, :, p:p + h, p:p + w]
        return dx


class GlobalAvgPool(Module):
    def forward(self, x, ctx):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self._shape).copy()


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32, name: str = ""):
        super().__init__(name)
        rng = rng or np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, (out_features, in_features)).astype(dtype),
                                f"{name}.weight")
        self.bias = Parameter(rng.uniform(-bound, bound, out_features).astype(dtype),
                              f"{name}.bias") if bias else None
        self._cache = None

    def own_parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    @property
    def fan_in(self) -> int:
        return self.in_features

    def forward(self, x, ctx):
        w = ctx.hooks.weight(self, self.weight.value)
        x_in, mask = ctx.hooks.activation(self, x)
        out = x_in @ w.T
        if self.bias is not None:
            out = out + self.bias.value
        if ctx.backprop:
            self._cache = (x_in, w, mask)
        return out

    def backward(self, grad):
        x_in, w, mask = self._cache
        self.weight.grad += grad.T @ x_in
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=0)
        dx = grad @ w
        if mask is not None:
            dx = dx * mask
        return dx


class Sequential(Module):
    def __init__(self, layers: List[Module], name: str = ""):
        super().__init__(name)
        self.layers = layers

    def children(self):
        return list(self.layers)

    def forward(self, x, ctx):
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class ConvUnit(Module):
    """Optional ReLU, then convolution, then optional batch norm."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding: int = 0, pre_relu: bool = True, batch_norm: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=np.float32, name: str = ""):
        super().__init__(name)
        self.relu = ReLU(f"{name}.relu") if pre_relu else None
        self.conv = Conv2d(in_channels, out_channels, kernel_size, stride, padding,
                           bias=False, rng=rng, dtype=dtype, name=f"{name}.conv")
        self.bn = BatchNorm2d(out_channels, dtype=dtype, name=f"{name}.bn") if batch_norm else None
        self._replaced = False

    @property
    def weight_layer(self) -> Conv2d:
        return self.conv

    def children(self):
        return [m for m in (self.relu, self.conv, self.bn) if m is not None]

    def forward(self, x, ctx):
        h = self.relu.forward(x, ctx) if self.relu is not None else x
        y = ctx.hooks.unit(self, h)
        self._replaced = y is not None
        if y is None:
            y = self.conv.forward(h, ctx)
            if self.bn is not None:
                y = self.bn.forward(y, ctx)
        return ctx.hooks.output(self, y)

    def backward(self, grad):
        if self._replaced:
            raise RuntimeError(f"Unit {self.name} ran through a replacement and cannot backpropagate")
        if self.bn is not None:
            grad = self.bn.backward(grad)
        grad = self.conv.backward(grad)
        if self.relu is not None:
            grad = self.relu.backward(grad)
        return grad


class LinearUnit(Module):
    bn = None

    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None,
                 dtype=np.float32, name: str = ""):
        super().__init__(name)
        self.fc = Linear(in_features, out_features, bias=True, rng=rng, dtype=dtype, name=f"{name}.fc")
        self._replaced = False

    @property
    def weight_layer(self) -> Linear:
        return self.fc

    def children(self):
        return [self.fc]

    def forward(self, x, ctx):
        y = ctx.hooks.unit(self, x)
        self._replaced = y is not None
        if y is None:
            y = self.fc.forward(x, ctx)
        return ctx.hooks.output(self, y)

    def backward(self, grad):
        if self._replaced:
            raise RuntimeError(f"Unit {self.name} ran through a replacement and cannot backpropagate")
        return self.fc.backward(grad)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    log_likelihood = shifted[np.arange(n), labels] - np.log(exp.sum(axis=1))
    loss = float(-log_likelihood.mean())
    grad = probs
    grad[np.arange(n), labels] -= 1
    return loss, grad / n
