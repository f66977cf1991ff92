"""Adam, the training loop, k-fold cross-validation and the ablation grids."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics as M
from . import rng as rngmod
from .autodiff import backprop, getitem
from .config import TrainConfig, to_mapping
from .data import augment_all, kfold, load_dataset, synth_dataset
from .data.phantom import PhantomConfig
from .losses import get_loss
from .model import PaNet, build, forward, predict_proba, save_checkpoint
from .postprocess import postprocess

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteGradientError(ArithmeticError):
    def __init__(self, parameter: str):
        super().__init__(f"non-finite gradient in parameter {parameter!r}")
        self.parameter = parameter


class TrainingDivergedError(ArithmeticError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch, self.loss = epoch, batch, loss


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update of every parameter from its ``grad``."""
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(p.name)
    state.t += 1
    c1 = 1.0 - BETA1 ** state.t
    c2 = 1.0 - BETA2 ** state.t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.data.dtype)
    return state


@dataclass
class TrainResult:
    model: PaNet
    epoch_losses: list
    step_losses: list
    steps: int


def _stack(samples, dtype):
    images = np.stack([s.image for s in samples])[:, None].astype(dtype)
    masks = np.stack([s.mask for s in samples]).astype(dtype)
    return images, masks


def train(cfg: TrainConfig, samples, stream=(), checkpoint=None, callback=None,
          log=None) -> TrainResult:
    """Train a fresh network on ``samples``.

    ``stream`` names the run inside ``cfg.seed`` (e.g. ``("fold", 3)``) so
    different runs shuffle independently. ``callback(step, loss, model)``
    may return True to stop early.
    """
    cfg.validate()
    if not samples:
        raise ValueError("training set is empty")
    model = build(cfg.model, seed=cfg.seed).train()
    loss_fn = get_loss(cfg.loss)
    params = model.trainable_parameters()
    images, masks = _stack(samples, model.dtype)
    n = len(samples)
    state = AdamState()
    epoch_losses, step_losses = [], []
    stop = False
    for epoch in range(cfg.epochs):
        order = rngmod.generator(cfg.seed, *stream, "shuffle", epoch).permutation(n)
        total = 0.0
        batches = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = np.sort(order[start:start + cfg.batch_size])
            model.zero_grad()
            probs = forward(model, images[idx])
            loss = loss_fn(getitem(probs, (slice(None), 1)), masks[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, b, value)
            backprop(loss)
            adam_step(params, state, cfg.learning_rate)
            step_losses.append(value)
            total += value
            batches += 1
            if callback is not None and callback(state.t, value, model):
                stop = True
                break
        epoch_losses.append(total / batches)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {epoch_losses[-1]:.5f}")
        if stop:
            break
    model.eval()
    if checkpoint is not None:
        save_checkpoint(model, checkpoint)
    return TrainResult(model, epoch_losses, step_losses, state.t)


def predict_masks(model: PaNet, samples, batch: int = 4) -> list[np.ndarray]:
    model.eval()
    out = []
    for start in range(0, len(samples), batch):
        chunk = np.stack([s.image for s in samples[start:start + batch]])
        out.extend(M.binarize(p) for p in predict_proba(model, chunk))
    return out


def evaluate_samples(model: PaNet, samples, pp_cfg) -> tuple[list, list]:
    """Metric reports for raw and post-processed predictions."""
    raw, post = [], []
    for s, pred in zip(samples, predict_masks(model, samples)):
        raw.append(M.evaluate_masks(s.mask, pred, s.id))
        post.append(M.evaluate_masks(s.mask, postprocess(pred, pp_cfg).mask, s.id))
    return raw, post


STAGES = ("before", "after")


@dataclass
class ExperimentReport:
    """Per-image metrics for every fold, before and after post-processing."""

    config: dict
    folds: list  # test ids per fold
    rows: list  # (fold, stage, MetricReport)
    loss_history: list  # per fold: epoch mean losses
    wall_clock: float = 0.0
    label: str = ""

    def reports(self, stage: str) -> list:
        return [r for _, s, r in self.rows if s == stage]

    def summary(self) -> dict:
        return {stage: M.summarize(self.reports(stage)) for stage in STAGES}

    def mean(self, stage: str, metric: str = "dice") -> float:
        return self.summary()[stage][metric]["mean"]

    def to_csv(self) -> str:
        fold_of = {}
        for f, s, r in self.rows:
            fold_of[id(r)] = (f, s)
        return M.reports_csv(
            [r for _, _, r in self.rows],
            {"fold": lambda r: fold_of[id(r)][0], "stage": lambda r: fold_of[id(r)][1]},
        )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config": self.config,
            "folds": self.folds,
            "n_images": len(self.reports("before")),
            "summary": self.summary(),
            "loss_history": self.loss_history,
            "units": {"mhd": "pixels", "sd": "population (ddof=0)"},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, prefix: str = "report") -> Path:
        """``<prefix>.csv``, ``<prefix>.json`` and (non-deterministic) ``timing.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{prefix}.csv").write_text(self.to_csv(), encoding="utf-8")
        (out / f"{prefix}.json").write_text(self.to_json(), encoding="utf-8")
        timing = out / "timing.json"
        existing = json.loads(timing.read_text()) if timing.exists() else {}
        existing[prefix] = {"wall_clock_seconds": self.wall_clock}
        timing.write_text(json.dumps(existing, indent=2, sort_keys=True) + "\n")
        return out


def original_samples(cfg: TrainConfig) -> list:
    """Un-augmented dataset: from ``data_root`` if set, else seeded phantoms."""
    if cfg.data_root:
        samples = load_dataset(cfg.data_root, tag="original")
        if not samples:
            samples = load_dataset(cfg.data_root)
        return samples
    size = tuple(cfg.model.input_size)
    return synth_dataset(cfg.phantoms, PhantomConfig(size=size, seed=cfg.seed))


def _fold_runs(cfg: TrainConfig, augmented, split, log=None):
    """Yield (fold index, fold, trained model, loss history) for every fold."""
    for k, fold in enumerate(split):
        train_ids = set(fold.train)
        train_set = [a for a in augmented if a.source in train_ids]
        if log:
            log(f"fold {k + 1}/{len(split)}: {len(train_set)} training samples, test {list(fold.test)}")
        res = train(cfg, train_set, stream=("fold", k), log=log)
        yield k, fold, res.model, res.epoch_losses


def cross_validate(cfg: TrainConfig, samples=None, log=None, label: str = "") -> ExperimentReport:
    cfg.validate()
    t0 = time.perf_counter()
    samples = original_samples(cfg) if samples is None else list(samples)
    if len(samples) < cfg.folds:
        raise ValueError(f"{len(samples)} samples cannot be split into {cfg.folds} folds")
    by_id = {s.id: s for s in samples}
    split = kfold([s.id for s in samples], cfg.folds, cfg.seed)
    augmented = augment_all(samples, cfg.seed, cfg.include_original)
    rows, history = [], []
    for k, fold, model, losses in _fold_runs(cfg, augmented, split, log):
        raw, post = evaluate_samples(model, [by_id[i] for i in fold.test], cfg.postprocess)
        rows += [(k, "before", r) for r in raw] + [(k, "after", r) for r in post]
        history.append(losses)
    return ExperimentReport(
        config=to_mapping(cfg),
        folds=[list(f.test) for f in split],
        rows=rows,
        loss_history=history,
        wall_clock=time.perf_counter() - t0,
        label=label,
    )


@dataclass(frozen=True)
class AblationRow:
    name: str
    enable_pdc: bool
    enable_se: bool
    postprocess: bool
    loss: str = "dice"

    def stage(self) -> str:
        return "after" if self.postprocess else "before"


MODULE_GRID = (
    AblationRow("base", False, False, False),
    AblationRow("base+PDC", True, False, False),
    AblationRow("base+SE", False, True, False),
    AblationRow("base+PDC+SE", True, True, False),
    AblationRow("base+PDC+SE+post", True, True, True),
)
LOSS_GRID = (
    AblationRow("ssim", True, True, False, "ssim"),
    AblationRow("bce", True, True, False, "bce"),
    AblationRow("dice", True, True, False, "dice"),
)


@dataclass
class AblationResult:
    module_rows: list  # (AblationRow, ExperimentReport)
    loss_rows: list
    folds: list

    def table(self, rows) -> list[dict]:
        out = []
        for row, rep in rows:
            s = rep.summary()[row.stage()]
            out.append({
                "row": row.name,
                "enable_pdc": row.enable_pdc,
                "enable_se": row.enable_se,
                "postprocess": row.postprocess,
                "loss": row.loss,
                **{m: s[m] for m in M.METRIC_NAMES},
            })
        return out

    def to_dict(self) -> dict:
        return {"folds": self.folds, "modules": self.table(self.module_rows),
                "losses": self.table(self.loss_rows)}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        for grid, rows in (("modules", self.module_rows), ("losses", self.loss_rows)):
            for i, (row, rep) in enumerate(rows, start=1):
                rep.write(out, prefix=f"{grid}_{i}_{row.name}")
        return out


def row_config(cfg: TrainConfig, row: AblationRow) -> TrainConfig:
    model = replace(cfg.model, enable_pdc=row.enable_pdc, enable_se=row.enable_se)
    return replace(cfg, model=model, loss=row.loss)


def ablate(cfg: TrainConfig, samples=None, log=None) -> AblationResult:
    """Module grid and loss grid on one shared fold split and augmented set.

    Rows that differ only in post-processing reuse the same trained models.
    """
    cfg.validate()
    samples = original_samples(cfg) if samples is None else list(samples)
    cache = {}
    results = {}
    for row in MODULE_GRID + LOSS_GRID:
        rc = row_config(cfg, row)
        key = (rc.model, rc.loss)
        if key not in cache:
            if log:
                log(f"ablation: training {row.name} ({rc.loss.value})")
            cache[key] = cross_validate(rc, samples, log=log, label=row.name)
        rep = cache[key]
        results[row] = replace(rep, label=row.name)
    module_rows = [(r, results[r]) for r in MODULE_GRID]
    loss_rows = [(r, results[r]) for r in LOSS_GRID]
    return AblationResult(module_rows, loss_rows, module_rows[0][1].folds)
