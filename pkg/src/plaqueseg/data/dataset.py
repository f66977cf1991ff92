"""On-disk dataset layout and fold splitting.

Layout::

    <root>/images/<id>.pgm
    <root>/masks/<id>.pgm
    <root>/manifest.tsv     id, split_tags, augmentation, seed, source

``split_tags`` is a comma-separated tag list (``original``, ``augmented``, ...).
``source`` names the un-augmented sample an entry was derived from, so fold
membership can follow the original image.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import rng as rngmod
from .transforms import Augmentation, Sample
from .io import load_image, load_mask, save_image, save_mask

MANIFEST = "manifest.tsv"
MANIFEST_FIELDS = ("id", "split_tags", "augmentation", "seed", "source")


class DatasetError(ValueError):
    pass


def write_dataset(root, samples, tags: str = "original") -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate sample ids")
    rows = []
    for s in samples:
        save_image(root / "images" / f"{s.id}.pgm", s.image)
        save_mask(root / "masks" / f"{s.id}.pgm", s.mask)
        rows.append((s.id, tags, Augmentation(s.augmentation).value, str(s.seed), s.source))
    with open(root / MANIFEST, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        w.writerows(rows)
    return root


def read_manifest(root) -> list[dict]:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise DatasetError(f"no {MANIFEST} under {root}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        missing = set(MANIFEST_FIELDS[:4]) - set(reader.fieldnames or ())
        if missing:
            raise DatasetError(f"manifest lacks columns {sorted(missing)}")
        return list(reader)


def load_dataset(root, tag: str | None = None) -> list[Sample]:
    root = Path(root)
    out = []
    for row in read_manifest(root):
        if tag is not None and tag not in row["split_tags"].split(","):
            continue
        sid = row["id"]
        out.append(Sample(
            sid,
            load_image(root / "images" / f"{sid}.pgm"),
            load_mask(root / "masks" / f"{sid}.pgm"),
            Augmentation(row["augmentation"]),
            row.get("source") or sid,
            int(row["seed"]),
        ))
    return out


@dataclass(frozen=True)
class Fold:
    test: tuple
    train: tuple


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple
    seed: int

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)

    def __getitem__(self, i) -> Fold:
        return self.folds[i]


def kfold(ids, k: int = 10, seed: int = 0) -> FoldSplit:
    """Seeded shuffle, then contiguous near-equal test blocks.

    Train lists keep the input order of ``ids``.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise DatasetError("ids must be unique")
    if k < 2:
        raise DatasetError("k must be >= 2")
    if k > len(ids):
        raise DatasetError(f"k={k} exceeds the number of ids ({len(ids)})")
    perm = rngmod.generator(seed, "kfold").permutation(len(ids))
    folds = []
    for block in np.array_split(perm, k):
        test = set(block.tolist())
        folds.append(Fold(tuple(ids[i] for i in sorted(block.tolist())),
                          tuple(x for i, x in enumerate(ids) if i not in test)))
    return FoldSplit(tuple(folds), seed)
