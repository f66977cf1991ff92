"""Network layers: dilated convolution, batch norm, pooling, learnable 2x
upsampling, activations, squeeze-excitation and the dilation pyramid.

Convolution is cross-correlation (no kernel flip). Feature maps are NCHW.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import Parameter, ShapeError, Tensor, concat, record


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


@dataclass
class Conv2dParams:
    weight: Parameter
    bias: Parameter | None
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    @classmethod
    def create(cls, name, cin, cout, kernel, rng, stride=1, padding=0, dilation=1,
               bias=True, dtype=np.float32):
        w = he_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, dtype)
        b = Parameter(np.zeros(cout, dtype), f"{name}.bias") if bias else None
        return cls(Parameter(w, f"{name}.weight"), b, stride, padding, dilation)

    @classmethod
    def create_transposed(cls, name, cin, cout, rng, dtype=np.float32):
        """2x2 stride-2 transposed kernel, weight laid out [Cin, Cout, 2, 2]."""
        w = he_normal(rng, (cin, cout, 2, 2), cin, dtype)
        return cls(Parameter(w, f"{name}.weight"), Parameter(np.zeros(cout, dtype), f"{name}.bias"), stride=2)

    def parameters(self):
        return [self.weight] + ([self.bias] if self.bias is not None else [])


def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    w = p.weight
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d", x.shape, w.shape, detail="expected NCHW input and OIHW weight")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if cin != wcin:
        raise ShapeError("conv2d", x.shape, w.shape, detail="channel mismatch")
    s, pad, d = p.stride, p.padding, p.dilation
    ho = conv_output_size(h, kh, s, pad, d)
    wo = conv_output_size(wd, kw, s, pad, d)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", x.shape, w.shape, detail=f"output size {ho}x{wo} < 1")
    # patches are pixel-major: (N*Ho*Wo, kh*kw*Cin) with columns ordered (i, j, c)
    cols = kernels.im2col(x.data, kh, kw, s, pad, d, ho, wo)
    w2 = w.data.transpose(0, 2, 3, 1).reshape(cout, -1)
    out = cols @ w2.T
    if p.bias is not None:
        out += p.bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def backward(g):
        # broadcast (zero-stride) gradients would fall off the BLAS path
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gx = kernels.col2im(g2 @ w2, n, cin, h, wd, kh, kw, s, pad, d, ho, wo)
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)
        if p.bias is not None and p.bias.requires_grad:
            gb = g2.sum(axis=0)
        return (gx, gw, gb) if p.bias is not None else (gx, gw)

    parents = (x, w, p.bias) if p.bias is not None else (x, w)
    return record("conv2d", parents, out, backward)


def upsample2x(x: Tensor, p: Conv2dParams) -> Tensor:
    """Stride-2 transposed convolution with a 2x2 kernel: exact 2x enlargement."""
    w, b = p.weight, p.bias
    if x.ndim != 4 or w.shape[0] != x.shape[1] or w.shape[2:] != (2, 2):
        raise ShapeError("upsample2x", x.shape, w.shape, detail="expected weight [Cin, Cout, 2, 2]")
    n, cin, h, wd = x.shape
    cout = w.shape[1]
    # (N, H, W, Cin) @ (Cin, Cout*4)
    xt = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    w2 = w.data.reshape(cin, cout * 4)
    y = (xt @ w2).reshape(n, h, wd, cout, 2, 2).transpose(0, 3, 1, 4, 2, 5).reshape(n, cout, 2 * h, 2 * wd)
    if b is not None:
        y = y + b.data.reshape(1, cout, 1, 1)
    y = np.ascontiguousarray(y)

    def backward(g):
        gt = np.ascontiguousarray(g.reshape(n, cout, h, 2, wd, 2).transpose(0, 2, 4, 1, 3, 5)).reshape(-1, cout * 4)
        gx = (gt @ w2.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = (xt.T @ gt).reshape(w.shape) if w.requires_grad else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)) if b.requires_grad else None)
        return grads

    parents = (x, w, b) if b is not None else (x, w)
    return record("upsample2x", parents, y, backward)


@dataclass
class BatchNormState:
    gamma: Parameter
    beta: Parameter
    running_mean: Parameter
    running_var: Parameter
    momentum: float = 0.1
    epsilon: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, name, channels, dtype=np.float32, momentum=0.1, epsilon=1e-5):
        return cls(
            Parameter(np.ones(channels, dtype), f"{name}.gamma"),
            Parameter(np.zeros(channels, dtype), f"{name}.beta"),
            Parameter(np.zeros(channels, dtype), f"{name}.running_mean", trainable=False),
            Parameter(np.ones(channels, dtype), f"{name}.running_var", trainable=False),
            momentum,
            epsilon,
        )

    def parameters(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]


def batchnorm2d(x: Tensor, s: BatchNormState) -> Tensor:
    if x.ndim != 4 or x.shape[1] != s.gamma.shape[0]:
        raise ShapeError("batchnorm2d", x.shape, s.gamma.shape, detail="channel mismatch")
    n, c, h, w = x.shape
    m = n * h * w
    if m == 0:
        raise ShapeError("batchnorm2d", x.shape, detail="no elements per channel")
    gamma = s.gamma.data.reshape(1, c, 1, 1)
    beta = s.beta.data.reshape(1, c, 1, 1)
    if s.training:
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        centered = x.data - mu
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        mom = s.momentum
        unbiased = var.reshape(c) * (m / (m - 1) if m > 1 else 1.0)
        s.running_mean.data[...] = (1 - mom) * s.running_mean.data + mom * mu.reshape(c)
        s.running_var.data[...] = (1 - mom) * s.running_var.data + mom * unbiased
    else:
        mu = s.running_mean.data.reshape(1, c, 1, 1)
        centered = x.data - mu
        var = s.running_var.data.reshape(1, c, 1, 1)
    inv_std = 1.0 / np.sqrt(var + s.epsilon)
    xhat = centered * inv_std
    out = xhat * gamma + beta
    training = s.training

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            dxhat = g * gamma
            if training:
                gx = inv_std / m * (m * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                                    - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
            else:
                gx = dxhat * inv_std
        return gx, gg, gb

    return record("batchnorm2d", (x, s.gamma, s.beta), out.astype(x.dtype, copy=False), backward)


def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """2x2/2 max pooling; ties send the gradient to the first element in scan order."""
    if (window, stride) != (2, 2):
        raise ValueError("only 2x2 windows with stride 2 are supported")
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError("maxpool2d", x.shape, detail="H and W must be even")
    out, arg = kernels.maxpool2x2(x.data)
    return record("maxpool2d", (x,), out, lambda g: (kernels.maxpool2x2_backward(g, arg),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record("relu", (x,), x.data * mask, lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def softmax_channels(x: Tensor) -> Tensor:
    if x.ndim < 2 or x.shape[1] < 2:
        raise ShapeError("softmax", x.shape, detail="needs at least 2 channels")
    z = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    out = z / z.sum(axis=1, keepdims=True)
    return record("softmax", (x,), out, lambda g: (out * (g - (g * out).sum(axis=1, keepdims=True)),))


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "softmax": softmax_channels}


def pointwise_activation(kind: str, x: Tensor) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def global_avg_pool(x: Tensor) -> Tensor:
    """N x C x H x W -> N x C spatial mean."""
    if x.ndim != 4:
        raise ShapeError("global_avg_pool", x.shape)
    n, c, h, w = x.shape
    scale = 1.0 / (h * w)
    out = x.data.mean(axis=(2, 3))
    return record(
        "global_avg_pool", (x,), out.astype(x.dtype, copy=False),
        lambda g: (np.broadcast_to((g * scale)[:, :, None, None], x.shape),),
    )


def concat_channels(xs) -> Tensor:
    xs = list(xs)
    for t in xs:
        if t.ndim != 4:
            raise ShapeError("concat_channels", *(u.shape for u in xs))
    return concat(xs, axis=1)


def linear(x: Tensor, weight: Parameter, bias: Parameter | None) -> Tensor:
    """x [N, Cin] times weight [Cout, Cin]^T plus bias [Cout]."""
    if x.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        grads = [g @ weight.data if x.requires_grad else None, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return record("linear", parents, out, backward)


def channel_gate(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply each N x C feature plane by the matching N x C gate value."""
    if x.ndim != 4 or gate.shape != x.shape[:2]:
        raise ShapeError("channel_gate", x.shape, gate.shape)
    g4 = gate.data[:, :, None, None]
    return record(
        "channel_gate", (x, gate), x.data * g4,
        lambda g: (g * g4, (g * x.data).sum(axis=(2, 3))),
    )


@dataclass
class SeBlockParams:
    fc1_weight: Parameter
    fc1_bias: Parameter
    fc2_weight: Parameter
    fc2_bias: Parameter
    reduction: int = 16

    @property
    def channels(self) -> int:
        return self.fc1_weight.shape[1]

    @staticmethod
    def bottleneck(channels: int, reduction: int) -> int:
        return max(channels // reduction, 4)

    @classmethod
    def create(cls, name, channels, rng, reduction=16, dtype=np.float32):
        hidden = cls.bottleneck(channels, reduction)
        return cls(
            Parameter(he_normal(rng, (hidden, channels), channels, dtype), f"{name}.fc1.weight"),
            Parameter(np.zeros(hidden, dtype), f"{name}.fc1.bias"),
            Parameter(he_normal(rng, (channels, hidden), hidden, dtype), f"{name}.fc2.weight"),
            Parameter(np.zeros(channels, dtype), f"{name}.fc2.bias"),
            reduction,
        )

    def parameters(self):
        return [self.fc1_weight, self.fc1_bias, self.fc2_weight, self.fc2_bias]


def se_gates(x: Tensor, p: SeBlockParams) -> Tensor:
    squeezed = global_avg_pool(x)
    hidden = relu(linear(squeezed, p.fc1_weight, p.fc1_bias))
    return sigmoid(linear(hidden, p.fc2_weight, p.fc2_bias))


def se_block(x: Tensor, p: SeBlockParams) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError("se_block", x.shape, p.fc1_weight.shape, detail="channel mismatch")
    return channel_gate(x, se_gates(x, p))


PDC_DILATIONS = (1, 2, 3)


@dataclass
class PdcParams:
    branches: list = field(default_factory=list)
    fusion: Conv2dParams | None = None

    @classmethod
    def create(cls, name, channels, rng, dtype=np.float32):
        branches = [
            Conv2dParams.create(f"{name}.d{d}", channels, channels, 3, rng, padding=d, dilation=d, dtype=dtype)
            for d in PDC_DILATIONS
        ]
        fusion = Conv2dParams.create(f"{name}.fuse", 3 * channels, channels, 1, rng, dtype=dtype)
        return cls(branches, fusion)

    def parameters(self):
        out = []
        for b in self.branches:
            out += b.parameters()
        return out + self.fusion.parameters()


def pdc_block(x: Tensor, p: PdcParams) -> Tensor:
    cin = p.fusion.weight.shape[0]
    if x.ndim != 4 or x.shape[1] != cin:
        raise ShapeError("pdc_block", x.shape, p.fusion.weight.shape, detail="channel mismatch")
    branches = [relu(conv2d(x, b)) for b in p.branches]
    return conv2d(concat_channels(branches), p.fusion)
