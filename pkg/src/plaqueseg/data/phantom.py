"""Synthetic longitudinal carotid ultrasound phantoms with exact plaque masks.

A dark horizontal lumen runs between two bright wall lines. One or two
plaques grow from the walls into the lumen (with two, one sits on each wall).
Small bright echo artifacts float in the lumen and are not part of the mask.
The whole frame is blurred and multiplied by unit-mean gamma speckle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import kernels
from .. import rng as rngmod
from .transforms import Sample, quantize

MAX_ATTEMPTS = 200


@dataclass(frozen=True)
class PhantomConfig:
    size: tuple = (128, 128)
    lumen_center: tuple = (0.42, 0.58)  # fraction of height
    lumen_half_width: tuple = (0.14, 0.22)  # fraction of height
    wall_thickness: tuple = (2.0, 4.0)  # pixels at 128 rows
    wall_undulation: float = 2.0  # pixels
    plaque_count: int = 0  # 0 picks 1 or 2 at random
    plaque_height: tuple = (0.25, 0.45)  # fraction of lumen width
    plaque_length: tuple = (0.10, 0.22)  # half-length, fraction of width
    plaque_roughness: float = 0.12
    plaque_intensity: tuple = (0.35, 0.75)
    max_area_ratio: float = 3.0
    tissue_intensity: tuple = (0.25, 0.40)
    lumen_intensity: float = 0.04
    wall_intensity: tuple = (0.75, 0.95)
    artifacts: tuple = (1, 4)
    blur_sigma: float = 0.8
    speckle_shape: float = 4.0
    foreground_fraction: tuple = (0.02, 0.20)
    seed: int = 0

    def __post_init__(self):
        h, w = self.size
        if h < 16 or w < 16:
            raise ValueError("phantom size must be at least 16x16")
        if self.plaque_count not in (0, 1, 2):
            raise ValueError("plaque_count must be 0 (random), 1 or 2")
        if self.speckle_shape <= 0:
            raise ValueError("speckle_shape must be positive")


def _u(g: np.random.Generator, lohi) -> float:
    lo, hi = lohi
    return float(g.uniform(lo, hi))


def _smooth_noise(g, shape, sigma) -> np.ndarray:
    n = ndimage.gaussian_filter(g.standard_normal(shape), sigma)
    return n / (n.std() + 1e-12)


def _plaque(g, cfg, rows, cols, wall_edge, lumen_width, on_top: bool, w: int) -> np.ndarray:
    """Half-ellipse with a rough rim, anchored on the inner edge of a wall."""
    cx = _u(g, (0.22 * w, 0.78 * w))
    a = _u(g, cfg.plaque_length) * w
    b = _u(g, cfg.plaque_height) * lumen_width
    # depth into the lumen measured from the wall edge of the same column
    depth = (rows - wall_edge[None, :]) if on_top else (wall_edge[None, :] - rows)
    theta = np.arctan2(depth / max(b, 1e-6), (cols - cx) / max(a, 1e-6))
    rough = np.ones_like(theta)
    for k in (2, 3, 5):
        rough += cfg.plaque_roughness / k * math.cos(g.uniform(0, 2 * math.pi)) * np.cos(k * theta + g.uniform(0, 2 * math.pi))
    rho = ((cols - cx) / a) ** 2 + (depth / b) ** 2
    return (depth >= 0) & (rho <= rough ** 2)


def _geometry(g, cfg: PhantomConfig):
    h, w = cfg.size
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    center = _u(g, cfg.lumen_center) * h
    half = _u(g, cfg.lumen_half_width) * h
    phase, freq = g.uniform(0, 2 * math.pi), g.uniform(0.5, 1.5)
    wave = cfg.wall_undulation * (h / 128) * np.sin(2 * math.pi * freq * np.arange(w) / w + phase)
    top_edge = center - half + wave  # inner edge of the near wall
    bot_edge = center + half + wave  # inner edge of the far wall
    thick = _u(g, cfg.wall_thickness) * h / 128
    count = cfg.plaque_count or int(g.integers(1, 3))
    if count == 2:
        walls = [True, False]
    else:
        walls = [bool(g.integers(0, 2))]
    plaques = []
    for on_top in walls:
        edge = np.ceil(top_edge) if on_top else np.floor(bot_edge)
        plaques.append(_plaque(g, cfg, rows, cols, edge, 2 * half, on_top, w))
    return rows, cols, top_edge, bot_edge, thick, plaques


def _valid(cfg: PhantomConfig, plaques, mask) -> bool:
    areas = [int(p.sum()) for p in plaques]
    if min(areas) == 0:
        return False
    if len(areas) == 2 and max(areas) > cfg.max_area_ratio * min(areas):
        return False
    frac = mask.mean()
    lo, hi = cfg.foreground_fraction
    if not lo <= frac <= hi:
        return False
    _, n = kernels.label(mask, 8)
    return n == len(plaques) and all(kernels.label(p.astype(np.uint8), 8)[1] == 1 for p in plaques)


@dataclass(frozen=True)
class PhantomLayout:
    """Accepted geometry of one phantom: inner wall edges per column and plaque masks."""

    top_edge: np.ndarray
    bot_edge: np.ndarray
    thickness: float
    plaques: tuple
    attempt: int


def _draw(cfg: PhantomConfig, index: int):
    h, w = cfg.size
    for attempt in range(MAX_ATTEMPTS):
        g = rngmod.generator(cfg.seed, "phantom", index, attempt)
        rows, cols, top_edge, bot_edge, thick, plaques = _geometry(g, cfg)
        mask = np.zeros((h, w), dtype=np.uint8)
        for p in plaques:
            mask |= p.astype(np.uint8)
        if _valid(cfg, plaques, mask):
            layout = PhantomLayout(top_edge, bot_edge, thick, tuple(p.astype(np.uint8) for p in plaques), attempt)
            return g, rows, cols, mask, layout
    raise RuntimeError(f"could not draw a valid phantom for index {index} in {MAX_ATTEMPTS} attempts")


def phantom_layout(cfg: PhantomConfig = PhantomConfig(), index: int = 0) -> PhantomLayout:
    return _draw(cfg, index)[4]


def synth_phantom(cfg: PhantomConfig = PhantomConfig(), index: int = 0, sample_id: str | None = None) -> Sample:
    """Deterministic in ``(cfg, index)``."""
    h, w = cfg.size
    g, rows, cols, mask, layout = _draw(cfg, index)
    top_edge, bot_edge, thick, plaques = layout.top_edge, layout.bot_edge, layout.thickness, layout.plaques

    tissue = _u(g, cfg.tissue_intensity) * (1.0 + 0.25 * _smooth_noise(g, (h, w), 3.0))
    image = np.clip(tissue, 0.0, 1.0)
    lumen = (rows > top_edge[None, :]) & (rows < bot_edge[None, :])
    image[lumen] = cfg.lumen_intensity
    wall_level = _u(g, cfg.wall_intensity)
    near = (rows <= top_edge[None, :]) & (rows > top_edge[None, :] - thick)
    far = (rows >= bot_edge[None, :]) & (rows < bot_edge[None, :] + thick)
    image[near | far] = wall_level

    texture = _smooth_noise(g, (h, w), 1.5)
    for p in plaques:
        p = p.astype(bool)
        level = _u(g, cfg.plaque_intensity)
        image[p] = np.clip(level * (1.0 + 0.3 * texture[p]), 0.05, 1.0)

    lo, hi = cfg.artifacts
    for _ in range(int(g.integers(lo, hi + 1))):
        r0 = g.uniform(0, h)
        c0 = g.uniform(0, w)
        rad = g.uniform(0.8, 1.8) * h / 128
        spot = ((rows - r0) ** 2 + (cols - c0) ** 2 <= rad ** 2) & lumen & (mask == 0)
        image[spot] = g.uniform(0.3, 0.6)

    image = ndimage.gaussian_filter(image, cfg.blur_sigma)
    image = image * g.gamma(cfg.speckle_shape, 1.0 / cfg.speckle_shape, size=(h, w))
    image = quantize(np.clip(image, 0.0, 1.0))
    sid = sample_id or f"ph{index:03d}"
    return Sample(sid, image, mask, seed=cfg.seed)


def synth_dataset(n: int, cfg: PhantomConfig = PhantomConfig()) -> list[Sample]:
    return [synth_phantom(cfg, i) for i in range(n)]
