"""Finite-difference gradient checks for every layer and loss, in float64.

Each case builds its inputs and parameters from a seeded stream and reduces
the op output to a scalar with a fixed random weighting, so every output
entry contributes a distinct gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as Ly
from . import losses as Ls
from . import rng as rngmod
from .autodiff import Parameter, Tensor, default_dtype, gradcheck

THRESHOLD = 1e-4
EPS = 1e-5


@dataclass
class GradResult:
    name: str
    error: float

    @property
    def ok(self) -> bool:
        return self.error < THRESHOLD


class _Reducer:
    """``sum(out * R)`` with ``R`` drawn once, on first use, and then frozen."""

    def __init__(self, g):
        self.g = g
        self.r = None

    def __call__(self, out: Tensor) -> Tensor:
        if self.r is None:
            self.r = Tensor(self.g.uniform(-1.0, 1.0, out.shape))
        return (out * self.r).sum()


def _x(g, shape, name="x", lo=-1.0, hi=1.0):
    return Parameter(g.uniform(lo, hi, shape), name)


def _away_from_zero(g, shape, name="x"):
    # keeps ReLU inputs clear of the kink by more than the difference step
    mag = g.uniform(0.1, 1.0, shape)
    sign = np.where(g.random(shape) < 0.5, -1.0, 1.0)
    return Parameter(mag * sign, name)


def _conv_case(dilation, stride=1):
    def build(g, red):
        x = _x(g, (2, 3, 9, 9))
        p = Ly.Conv2dParams.create("c", 3, 4, 3, g, stride=stride, padding=dilation,
                                   dilation=dilation, dtype=np.float64)
        p.bias.data[...] = g.uniform(-1, 1, 4)
        return (lambda: red(Ly.conv2d(x, p))), [x, *p.parameters()]
    return build


def _bn_case(training):
    def build(g, red):
        x = _x(g, (3, 2, 4, 4))
        s = Ly.BatchNormState.create("bn", 2, dtype=np.float64)
        s.gamma.data[...] = g.uniform(0.5, 1.5, 2)
        s.beta.data[...] = g.uniform(-1, 1, 2)
        s.running_mean.data[...] = g.uniform(-0.5, 0.5, 2)
        s.running_var.data[...] = g.uniform(0.5, 1.5, 2)
        s.training = training
        return (lambda: red(Ly.batchnorm2d(x, s))), [x, s.gamma, s.beta]
    return build


def _maxpool(g, red):
    # distinct values spaced far beyond the difference step so no argmax flips
    vals = g.permutation(2 * 3 * 6 * 6).astype(np.float64) * 0.01
    x = Parameter(vals.reshape(2, 3, 6, 6), "x")
    return (lambda: red(Ly.maxpool2d(x))), [x]


def _upsample(g, red):
    x = _x(g, (2, 4, 3, 3))
    p = Ly.Conv2dParams.create_transposed("up", 4, 2, g, dtype=np.float64)
    p.bias.data[...] = g.uniform(-1, 1, 2)
    return (lambda: red(Ly.upsample2x(x, p))), [x, *p.parameters()]


def _activation(kind):
    def build(g, red):
        x = _away_from_zero(g, (2, 3, 4, 4)) if kind == "relu" else _x(g, (2, 3, 4, 4), lo=-3, hi=3)
        return (lambda: red(Ly.pointwise_activation(kind, x))), [x]
    return build


def _gap(g, red):
    x = _x(g, (2, 3, 4, 5))
    return (lambda: red(Ly.global_avg_pool(x))), [x]


def _concat(g, red):
    a, b = _x(g, (2, 2, 3, 3), "a"), _x(g, (2, 3, 3, 3), "b")
    return (lambda: red(Ly.concat_channels([a, b]))), [a, b]


def _se(g, red):
    x = _x(g, (2, 8, 4, 4))
    p = Ly.SeBlockParams.create("se", 8, g, reduction=2, dtype=np.float64)
    p.fc1_bias.data[...] = g.uniform(0.2, 0.5, p.fc1_bias.shape)  # keep the hidden ReLU active
    p.fc2_bias.data[...] = g.uniform(-1, 1, p.fc2_bias.shape)
    return (lambda: red(Ly.se_block(x, p))), [x, *p.parameters()]


def _pdc(g, red):
    x = _x(g, (1, 3, 7, 7))
    p = Ly.PdcParams.create("pdc", 3, g, dtype=np.float64)
    for b in p.branches:
        b.bias.data[...] = g.uniform(-0.5, 0.5, 3)
    return (lambda: red(Ly.pdc_block(x, p))), [x, *p.parameters()]


def _loss_case(fn, **kw):
    def build(g, red):
        P = _x(g, (2, 16, 16), "P", lo=0.05, hi=0.95)
        L = (g.random((2, 16, 16)) < 0.5).astype(np.float64)
        return (lambda: fn(P, L, **kw)), [P]
    return build


CASES = {
    "conv2d[d=1]": _conv_case(1),
    "conv2d[d=2]": _conv_case(2),
    "conv2d[d=3]": _conv_case(3),
    "conv2d[d=2,s=2]": _conv_case(2, stride=2),
    "batchnorm2d[train]": _bn_case(True),
    "batchnorm2d[eval]": _bn_case(False),
    "maxpool2d": _maxpool,
    "upsample2x": _upsample,
    "relu": _activation("relu"),
    "sigmoid": _activation("sigmoid"),
    "softmax": _activation("softmax"),
    "global_avg_pool": _gap,
    "concat_channels": _concat,
    "se_block": _se,
    "pdc_block": _pdc,
    "dice_loss": _loss_case(Ls.dice_loss),
    "bce_loss": _loss_case(Ls.bce_loss),
    "ssim_loss[gaussian]": _loss_case(Ls.ssim_loss),
    "ssim_loss[uniform]": _loss_case(Ls.ssim_loss, cfg=Ls.SsimConfig(mode="uniform", window=7)),
    "ssim_loss[global]": _loss_case(Ls.ssim_loss, cfg=Ls.SsimConfig(mode="global")),
}


def run_case(name: str, seed: int = 0) -> GradResult:
    g = rngmod.generator(seed, "gradcheck", name)
    red = _Reducer(rngmod.generator(seed, "gradcheck-weights", name))
    with default_dtype(np.float64):
        fn, params = CASES[name](g, red)
        return GradResult(name, gradcheck(fn, params, EPS))


def run_suite(seed: int = 0, names=None) -> list[GradResult]:
    return [run_case(n, seed) for n in (names or CASES)]
