"""Training objectives on the plaque-probability map.

All losses take ``P`` (predicted foreground probability) and ``L`` (binary
label) shaped N x H x W or H x W, as Tensors or arrays, and return a scalar
Tensor. The background channel is implied by ``1 - P``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import Conv2dParams, conv2d


class LossKind(str, enum.Enum):
    dice = "dice"
    bce = "bce"
    ssim = "ssim"


def _pair(P, L, op):
    dtype = P.dtype if isinstance(P, Tensor) else (L.dtype if isinstance(L, Tensor) else None)
    P = ad.as_tensor(P, dtype=dtype)
    L = ad.as_tensor(L, dtype=P.dtype)
    if P.shape != L.shape:
        raise ShapeError(op, P.shape, L.shape)
    if P.ndim == 2:
        P = P.reshape(1, *P.shape)
        L = L.reshape(1, *L.shape)
    if P.ndim != 3:
        raise ShapeError(op, P.shape, detail="expected H x W or N x H x W")
    return P, L


def dice_loss(P, L, eps: float = 1e-6) -> Tensor:
    """``1 - (2 sum(L*P) + eps) / (sum(L) + sum(P) + eps)``, averaged over the batch."""
    P, L = _pair(P, L, "dice_loss")
    inter = (P * L).sum(axis=(1, 2))
    total = P.sum(axis=(1, 2)) + L.sum(axis=(1, 2))
    return (1.0 - (inter * 2.0 + eps) / (total + eps)).mean()


BCE_CLAMP = 1e-7


def bce_loss(P, L) -> Tensor:
    P, L = _pair(P, L, "bce_loss")
    Pc = ad.clip(P, BCE_CLAMP, 1.0 - BCE_CLAMP)
    per_pixel = L * ad.log(Pc) + (1.0 - L) * ad.log(1.0 - Pc)
    return -per_pixel.mean()


@dataclass(frozen=True)
class SsimConfig:
    """Window statistics for the SSIM loss.

    ``mode`` is ``"gaussian"`` (sliding Gaussian-weighted windows),
    ``"uniform"`` (sliding box windows) or ``"global"`` (one statistic per
    image).
    """

    window: int = 11
    gaussian_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    mode: str = "gaussian"

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    def kernel(self, dtype=np.float64) -> np.ndarray:
        if self.window % 2 == 0 and self.mode == "gaussian":
            raise ValueError("window must be odd")
        if self.mode == "uniform":
            k = np.ones((self.window, self.window))
        else:
            r = np.arange(self.window) - (self.window - 1) / 2
            g = np.exp(-(r * r) / (2 * self.gaussian_sigma ** 2))
            k = np.outer(g, g)
        return (k / k.sum()).astype(dtype)


def _window_stats(x: Tensor, filt: Conv2dParams | None) -> Tensor:
    if filt is None:
        return x.mean(axis=(1, 2))
    n, h, w = x.shape
    return conv2d(x.reshape(n, 1, h, w), filt)


def ssim_map(P, L, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """Per-window SSIM values (N x H' x W' for windowed modes, N for global)."""
    P, L = _pair(P, L, "ssim")
    if cfg.mode == "global":
        filt = None
    else:
        if cfg.mode not in ("gaussian", "uniform"):
            raise ValueError(f"unknown SSIM mode {cfg.mode!r}")
        if min(P.shape[1:]) < cfg.window:
            raise ShapeError("ssim", P.shape, detail=f"image smaller than window {cfg.window}")
        k = cfg.kernel(P.dtype)
        filt = Conv2dParams(Tensor(k[None, None]), None)
    # each statistic gets its own filtering call so identical inputs give identical outputs
    mu_p = _window_stats(P, filt)
    mu_l = _window_stats(L, filt)
    e_pp = _window_stats(P * P, filt)
    e_ll = _window_stats(L * L, filt)
    e_pl = _window_stats(P * L, filt)
    var_p = e_pp - mu_p * mu_p
    var_l = e_ll - mu_l * mu_l
    cov = e_pl - mu_p * mu_l
    c1, c2 = cfg.c1, cfg.c2
    num = (mu_p * mu_l * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mu_p * mu_p + mu_l * mu_l + c1) * (var_p + var_l + c2)
    return num / den


def ssim_loss(P, L, cfg: SsimConfig = SsimConfig()) -> Tensor:
    """``1 - mean SSIM`` over windows (and the batch)."""
    return 1.0 - ssim_map(P, L, cfg).mean()


LOSSES = {LossKind.dice: dice_loss, LossKind.bce: bce_loss, LossKind.ssim: ssim_loss}


def get_loss(kind) -> callable:
    return LOSSES[LossKind(kind)]
