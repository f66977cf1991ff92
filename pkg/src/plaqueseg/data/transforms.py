"""Geometric augmentation of image/mask pairs.

Images are resampled bilinearly and masks by nearest neighbor with the same
geometry; anything sampled from outside the frame is 0. Resampled images are
snapped back to the 8-bit grid so a sample written to disk and read back is
unchanged.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .. import rng as rngmod


class Augmentation(str, enum.Enum):
    none = "none"
    hflip = "hflip"
    vflip = "vflip"
    rot180 = "rot180"
    rot_p30 = "rot+30"
    rot_m30 = "rot-30"
    elastic = "elastic"


TRANSFORMS = (
    Augmentation.hflip,
    Augmentation.vflip,
    Augmentation.rot180,
    Augmentation.rot_p30,
    Augmentation.rot_m30,
    Augmentation.elastic,
)

ELASTIC_ALPHA = 8.0
ELASTIC_SIGMA = 6.0
REFERENCE_WIDTH = 128


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    image: np.ndarray
    mask: np.ndarray
    augmentation: Augmentation = Augmentation.none
    source: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} differ")
        if not self.source:
            object.__setattr__(self, "source", self.id)

    def same_content(self, other: "Sample") -> bool:
        return np.array_equal(self.image, other.image) and np.array_equal(self.mask, other.mask)


def quantize(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image * 255.0), 0, 255) / 255.0


def _derived(s: Sample, tag: Augmentation, image, mask) -> Sample:
    return replace(s, id=f"{s.source}_{tag.value}", image=image,
                   mask=mask.astype(np.uint8), augmentation=tag)


def hflip(s: Sample) -> Sample:
    return replace(s, image=s.image[:, ::-1].copy(), mask=s.mask[:, ::-1].copy())


def vflip(s: Sample) -> Sample:
    return replace(s, image=s.image[::-1, :].copy(), mask=s.mask[::-1, :].copy())


def rot180(s: Sample) -> Sample:
    return replace(s, image=s.image[::-1, ::-1].copy(), mask=s.mask[::-1, ::-1].copy())


def _warp(s: Sample, rows: np.ndarray, cols: np.ndarray) -> Sample:
    coords = np.stack([rows, cols])
    image = ndimage.map_coordinates(s.image, coords, order=1, mode="constant", cval=0.0)
    mask = ndimage.map_coordinates(s.mask.astype(np.float64), coords, order=0, mode="constant", cval=0.0)
    return replace(s, image=quantize(image), mask=(mask > 0.5).astype(np.uint8))


def rotate(s: Sample, degrees: float) -> Sample:
    """Counter-clockwise (as displayed) rotation about the image center."""
    h, w = s.image.shape
    rc, cc = (h - 1) / 2.0, (w - 1) / 2.0
    r, c = np.mgrid[0:h, 0:w].astype(np.float64)
    t = math.radians(degrees)
    ct, st = math.cos(t), math.sin(t)
    # inverse map: output pixel is fetched from the source rotated by -t
    dr, dc = r - rc, c - cc
    src_r = rc + ct * dr + st * dc
    src_c = cc - st * dr + ct * dc
    return _warp(s, src_r, src_c)


def displacement_field(shape, alpha: float, sigma: float, seed: int, *stream) -> np.ndarray:
    """Smoothed Uniform(-1, 1) field scaled by ``alpha``; shape (2, H, W)."""
    g = rngmod.generator(seed, "elastic", *stream)
    field = g.uniform(-1.0, 1.0, size=(2, *shape))
    return np.stack([ndimage.gaussian_filter(f, sigma, mode="reflect") * alpha for f in field])


def elastic_deform(s: Sample, alpha: float | None = None, sigma: float | None = None,
                   seed: int = 0) -> Sample:
    h, w = s.image.shape
    scale = w / REFERENCE_WIDTH
    alpha = ELASTIC_ALPHA * scale if alpha is None else alpha
    sigma = ELASTIC_SIGMA * scale if sigma is None else sigma
    if alpha < 0 or sigma <= 0:
        raise ValueError("elastic deformation needs alpha >= 0 and sigma > 0")
    if alpha == 0:
        return replace(s, image=s.image.copy(), mask=s.mask.copy())
    d = displacement_field((h, w), alpha, sigma, seed, s.source)
    r, c = np.mgrid[0:h, 0:w].astype(np.float64)
    return _warp(s, r + d[0], c + d[1])


def apply(s: Sample, tag: Augmentation, seed: int = 0) -> Sample:
    tag = Augmentation(tag)
    if tag is Augmentation.none:
        out = s
    elif tag is Augmentation.hflip:
        out = hflip(s)
    elif tag is Augmentation.vflip:
        out = vflip(s)
    elif tag is Augmentation.rot180:
        out = rot180(s)
    elif tag is Augmentation.rot_p30:
        out = rotate(s, 30.0)
    elif tag is Augmentation.rot_m30:
        out = rotate(s, -30.0)
    else:
        out = elastic_deform(s, seed=seed)
    return _derived(s, tag, out.image, out.mask)


def augment(s: Sample, seed: int = 0, include_original: bool = False) -> list[Sample]:
    """The six training transforms of ``s`` (optionally preceded by ``s`` itself)."""
    out = [apply(s, t, seed) for t in TRANSFORMS]
    if include_original:
        out.insert(0, apply(s, Augmentation.none))
    return out


def augment_all(samples, seed: int = 0, include_original: bool = False) -> list[Sample]:
    out = []
    for s in samples:
        out.extend(augment(s, seed, include_original))
    return out
