"""Overlap and boundary-distance metrics on binary masks.

Distances are in pixels. MHD is computed on 4-connectivity boundary points.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

THRESHOLD = 0.5


class MetricError(ValueError):
    pass


class EmptyPointSetError(MetricError):
    """Raised when a directed distance is requested against an empty set."""


def as_mask(m) -> np.ndarray:
    a = np.asarray(m)
    if a.ndim != 2:
        raise MetricError(f"mask must be 2-D, got shape {a.shape}")
    if a.dtype != bool and not np.isin(a, (0, 1)).all():
        raise MetricError("mask values must be 0 or 1")
    return a.astype(np.uint8)


def binarize(prob, threshold: float = THRESHOLD) -> np.ndarray:
    """Foreground where ``prob > threshold`` (argmax of a two-class softmax)."""
    return (np.asarray(prob) > threshold).astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(L, S) -> ConfusionCounts:
    L, S = as_mask(L).astype(bool), as_mask(S).astype(bool)
    if L.shape != S.shape:
        raise MetricError(f"shape mismatch: label {L.shape} vs segmentation {S.shape}")
    tp = int(np.count_nonzero(L & S))
    fp = int(np.count_nonzero(~L & S))
    fn = int(np.count_nonzero(L & ~S))
    return ConfusionCounts(tp, L.size - tp - fp - fn, fp, fn)


def overlap_metrics(c: ConfusionCounts) -> tuple[float, float, float, bool]:
    """Return ``(dice, iou, acc, degenerate)``.

    ``degenerate`` is set when both masks are empty; dice and iou are then 1.
    """
    if c.total <= 0:
        raise MetricError("confusion counts are empty")
    acc = (c.tp + c.tn) / c.total
    union = c.tp + c.fp + c.fn
    if union == 0:
        return 1.0, 1.0, acc, True
    return 2 * c.tp / (2 * c.tp + c.fp + c.fn), c.tp / union, acc, False


def boundary(m) -> np.ndarray:
    """Foreground pixels with a background (or out-of-bounds) 4-neighbor, as (row, col) rows."""
    fg = as_mask(m).astype(bool)
    p = np.pad(fg, 1)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return np.argwhere(fg & ~interior).astype(np.int64)


def directed_distance(A, B) -> float:
    """Mean over ``a`` in ``A`` of the Euclidean distance to the nearest point of ``B``."""
    A = np.asarray(A, dtype=np.int64).reshape(-1, 2)
    B = np.asarray(B, dtype=np.int64).reshape(-1, 2)
    if len(A) == 0 or len(B) == 0:
        raise EmptyPointSetError("distance to or from an empty point set is undefined")
    sq = kernels.min_sq_dists(A, B)
    return math.fsum(math.sqrt(v) for v in sq.tolist()) / len(A)


def mhd(A, B) -> float:
    return max(directed_distance(A, B), directed_distance(B, A))


def mask_mhd(L, S) -> float:
    return mhd(boundary(L), boundary(S))


@dataclass
class MetricReport:
    dice: float
    iou: float
    acc: float
    mhd: float | None
    flags: tuple = ()
    image_id: str = ""

    def row(self) -> dict:
        return {
            "image_id": self.image_id,
            "dice": self.dice,
            "iou": self.iou,
            "acc": self.acc,
            "mhd": "" if self.mhd is None else self.mhd,
            "flags": "|".join(self.flags),
        }


def evaluate_masks(L, S, image_id: str = "") -> MetricReport:
    L, S = as_mask(L), as_mask(S)
    c = confusion(L, S)
    dice, iou, acc, degenerate = overlap_metrics(c)
    flags = []
    if degenerate:
        flags.append("empty_both")
    else:
        if c.tp + c.fn == 0:
            flags.append("empty_label")
        if c.tp + c.fp == 0:
            flags.append("empty_pred")
    try:
        dist = mask_mhd(L, S)
    except EmptyPointSetError:
        dist = None
        flags.append("mhd_undefined")
    return MetricReport(dice, iou, acc, dist, tuple(flags), image_id)


METRIC_NAMES = ("dice", "iou", "acc", "mhd")
CSV_FIELDS = ("image_id", "dice", "iou", "acc", "mhd", "flags")


def summarize(reports) -> dict:
    """Mean and population SD (ddof=0) per metric; undefined MHD rows are skipped and counted."""
    out = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if vals:
            arr = np.array(vals, dtype=np.float64)
            out[name] = {"mean": float(arr.mean()), "sd": float(arr.std()), "n": len(vals)}
        else:
            out[name] = {"mean": None, "sd": None, "n": 0}
    out["undefined_mhd"] = sum(1 for r in reports if r.mhd is None)
    return out


def format_float(x) -> str:
    return "" if x is None or x == "" else repr(float(x))


def reports_csv(reports, extra: dict | None = None) -> str:
    """Per-image CSV. ``extra`` maps column name to a per-report callable."""
    extra = extra or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*extra.keys(), *CSV_FIELDS])
    for r in reports:
        row = r.row()
        w.writerow([*(fn(r) for fn in extra.values()), row["image_id"],
                    *(format_float(row[k]) for k in METRIC_NAMES), row["flags"]])
    return buf.getvalue()


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"
