"""Max-contour refinement of a binary plaque mask.

Pipeline: erode, label 8-connected components, keep the largest one (and the
second largest when the two are of comparable area), grow the kept seeds back
inside the original mask, then fill holes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .metrics import as_mask


@dataclass(frozen=True)
class StructuringElement:
    size: int = 3
    iterations: int = 1
    kernel: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        k = self.array()
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ValueError("structuring element must be an odd square")
        if not k.any():
            raise ValueError("structuring element needs at least one active entry")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")

    def array(self) -> np.ndarray:
        if self.kernel is not None:
            return np.asarray(self.kernel, dtype=np.uint8)
        return np.ones((self.size, self.size), dtype=np.uint8)


@dataclass(frozen=True)
class PostprocessConfig:
    area_ratio: float = 5.0
    connectivity: int = 8
    element: StructuringElement = StructuringElement()

    def __post_init__(self):
        if not self.area_ratio > 1:
            raise ValueError("area_ratio must be > 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


@dataclass
class LabeledComponents:
    labels: np.ndarray
    num: int
    areas: np.ndarray  # indexed by label; areas[0] unused

    def ranked(self) -> list[int]:
        """Labels sorted by area descending; ties go to the lower label."""
        return sorted(range(1, self.num + 1), key=lambda k: (-int(self.areas[k]), k))

    def sorted_areas(self) -> list[int]:
        return [int(self.areas[k]) for k in self.ranked()]


class PostprocessResult(NamedTuple):
    mask: np.ndarray
    flags: tuple


def erode(m, se: StructuringElement = StructuringElement()) -> np.ndarray:
    out = as_mask(m)
    k = se.array()
    for _ in range(se.iterations):
        out = kernels.erode(out, k)
    return out


def label_components(m, connectivity: int = 8) -> LabeledComponents:
    labels, num = kernels.label(as_mask(m), connectivity)
    areas = np.bincount(labels.ravel(), minlength=num + 1)
    areas[0] = 0
    return LabeledComponents(labels, int(num), areas)


def select_by_area(areas, area_ratio: float = 5.0) -> list[int]:
    """Indices (into ``areas``) kept by the ratio rule, largest first."""
    order = sorted(range(len(areas)), key=lambda i: (-areas[i], i))
    if not order:
        return []
    if len(order) == 1:
        return order[:1]
    c1, c2 = order[0], order[1]
    if areas[c1] <= area_ratio * areas[c2]:
        return [c1, c2]
    return [c1]


def select_components(lc: LabeledComponents, cfg: PostprocessConfig = PostprocessConfig()) -> set[int]:
    areas = [int(lc.areas[k]) for k in range(1, lc.num + 1)]
    return {i + 1 for i in select_by_area(areas, cfg.area_ratio)}


def fill_holes(m) -> np.ndarray:
    return kernels.fill_holes(as_mask(m))


def reconstruct(seeds, mask, connectivity: int = 8) -> np.ndarray:
    """Components of ``mask`` that contain at least one seed pixel."""
    mask = as_mask(mask)
    lc = label_components(mask, connectivity)
    hit = np.unique(lc.labels[as_mask(seeds).astype(bool) & mask.astype(bool)])
    hit = hit[hit > 0]
    return np.isin(lc.labels, hit).astype(np.uint8)


def postprocess(m, cfg: PostprocessConfig = PostprocessConfig()) -> PostprocessResult:
    mask = as_mask(m)
    if not mask.any():
        return PostprocessResult(np.zeros_like(mask), ("empty_input",))
    eroded = erode(mask, cfg.element)
    if not eroded.any():
        return PostprocessResult(np.zeros_like(mask), ("empty_after_erosion",))
    lc = label_components(eroded, cfg.connectivity)
    keep = select_components(lc, cfg)
    seeds = np.isin(lc.labels, sorted(keep)).astype(np.uint8)
    grown = reconstruct(seeds, mask, cfg.connectivity)
    flags = ("kept_two",) if len(keep) == 2 else ()
    return PostprocessResult(fill_holes(grown), flags)
