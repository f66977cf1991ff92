import csv
import io
import json

import numpy as np
import pytest

from plaqueseg import train as T
from plaqueseg.autodiff import Parameter
from plaqueseg.config import ConfigError, TrainConfig
from plaqueseg.data import PhantomConfig, kfold, synth_dataset, synth_phantom
from plaqueseg.losses import LossKind
from plaqueseg.model import ModelConfig, checkpoint_bytes


def _params(rng, grads):
    ps = []
    for i, g in enumerate(grads):
        p = Parameter(rng.standard_normal(np.shape(g)), f"p{i}")
        p.grad[...] = g
        ps.append(p)
    return ps


# ---------------------------------------------------------------- adam

def test_adam_zero_grad_fixed_point(rng):
    ps = _params(rng, [np.zeros((3, 2)), np.zeros(4)])
    before = [p.data.copy() for p in ps]
    state = T.adam_step(ps, T.AdamState(), 0.001)
    assert state.t == 1
    for p, b in zip(ps, before):
        assert np.array_equal(p.data, b)
    T.adam_step(ps, state, 0.001)
    assert state.t == 2


def test_adam_first_step_is_sign(rng):
    g = np.array([0.3, -2.0, 5e-3, -7.0])
    (p,) = _params(rng, [g])
    start = p.data.copy()
    T.adam_step([p], T.AdamState(), 0.001)
    assert np.allclose(p.data - start, -0.001 * np.sign(g), rtol=1e-5, atol=0)


def test_adam_moments_and_determinism(rng):
    gs = [rng.standard_normal((2, 3)) for _ in range(5)]

    def run():
        (p,) = _params(np.random.default_rng(1), [gs[0]])
        state = T.AdamState()
        for g in gs:
            p.grad[...] = g
            T.adam_step([p], state, 0.01)
        return p.data.copy(), state

    a, sa = run()
    b, _ = run()
    assert np.array_equal(a, b)
    assert (sa.v["p0"] >= 0).all() and sa.t == 5
    m = np.zeros((2, 3))
    for g in gs:
        m = 0.9 * m + 0.1 * g
    assert np.allclose(sa.m["p0"], m)


def test_adam_non_finite_names_parameter(rng):
    ps = _params(rng, [np.ones(2), np.array([1.0, np.nan])])
    before = ps[0].data.copy()
    with pytest.raises(T.NonFiniteGradientError) as exc:
        T.adam_step(ps, T.AdamState(), 0.001)
    assert exc.value.parameter == "p1"
    # nothing was updated
    assert np.array_equal(ps[0].data, before)


# ---------------------------------------------------------------- training

def _cfg(**kw):
    model = kw.pop("model", ModelConfig(base_channels=4, input_size=(32, 32)))
    return TrainConfig(model=model, **kw)


def _small_phantoms(n, size=32):
    return synth_dataset(n, PhantomConfig(size=(size, size), foreground_fraction=(0.01, 0.4)))


def test_descent_fifty_steps():
    s = synth_phantom(PhantomConfig(size=(64, 64)), 0)
    cfg = TrainConfig(epochs=50, batch_size=1, model=ModelConfig(base_channels=8, input_size=(64, 64)))
    res = T.train(cfg, [s])
    assert res.steps == 50 and len(res.step_losses) == 50
    assert res.step_losses[-1] < res.step_losses[0]
    assert not res.model.training


def test_step_count_and_history():
    samples = _small_phantoms(5)
    res = T.train(_cfg(epochs=2, batch_size=2), samples)
    assert res.steps == 2 * 3
    assert len(res.epoch_losses) == 2
    assert res.epoch_losses[0] == pytest.approx(np.mean(res.step_losses[:3]))


def test_training_deterministic(tmp_path):
    samples = _small_phantoms(3)
    a = T.train(_cfg(epochs=1), samples, checkpoint=tmp_path / "a.ckpt")
    b = T.train(_cfg(epochs=1), samples, checkpoint=tmp_path / "b.ckpt")
    assert a.step_losses == b.step_losses
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    c = T.train(_cfg(epochs=1, seed=1), samples)
    assert checkpoint_bytes(c.model) != (tmp_path / "a.ckpt").read_bytes()


def test_callback_can_stop():
    seen = []
    res = T.train(_cfg(epochs=5), _small_phantoms(4), callback=lambda t, loss, m: seen.append(t) or t == 3)
    assert seen == [1, 2, 3] and res.steps == 3


def test_divergence_reports_position(monkeypatch):
    real = T.get_loss

    def bad(kind):
        fn = real(kind)
        return lambda P, L: fn(P, L) * float("nan")

    monkeypatch.setattr(T, "get_loss", bad)
    with pytest.raises(T.TrainingDivergedError) as exc:
        T.train(_cfg(epochs=1), _small_phantoms(2))
    assert (exc.value.epoch, exc.value.batch) == (0, 0)


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(learning_rate=0.0), dict(batch_size=0), dict(folds=1)])
def test_invalid_config_rejected(bad):
    with pytest.raises(ConfigError):
        T.train(_cfg(**bad), _small_phantoms(1))


def test_empty_training_set():
    with pytest.raises(ValueError):
        T.train(_cfg(epochs=1), [])


# ---------------------------------------------------------------- cross-validation

@pytest.fixture(scope="module")
def tiny_cv():
    samples = _small_phantoms(6)
    cfg = _cfg(epochs=1, folds=3)
    return cfg, samples, T.cross_validate(cfg, samples, label="tiny")


def test_cv_shape(tiny_cv):
    cfg, samples, rep = tiny_cv
    assert rep.folds == [list(f.test) for f in kfold([s.id for s in samples], 3, cfg.seed)]
    assert len(rep.reports("before")) == len(rep.reports("after")) == 6
    assert sorted(r.image_id for r in rep.reports("before")) == sorted(s.id for s in samples)
    assert len(rep.loss_history) == 3
    d = rep.to_dict()
    assert set(d["summary"]) == {"before", "after"}
    assert d["n_images"] == 6 and d["config"]["folds"] == "3"


def test_cv_trains_on_augmented_training_sources(monkeypatch):
    samples = _small_phantoms(4)
    seen = []
    real = T.train

    def spy(cfg, train_set, **kw):
        seen.append(sorted({s.source for s in train_set}))
        assert len(train_set) == 6 * len(seen[-1])
        assert all(s.augmentation.value != "none" for s in train_set)
        return real(cfg, train_set[:2], **kw)

    monkeypatch.setattr(T, "train", spy)
    rep = T.cross_validate(_cfg(epochs=1, folds=2), samples)
    for fold, sources in zip(rep.folds, seen):
        assert not set(fold) & set(sources)
        assert set(fold) | set(sources) == {s.id for s in samples}


def test_report_reaggregates(tiny_cv, tmp_path):
    _, _, rep = tiny_cv
    rep.write(tmp_path)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "report.csv").read_text())))
    assert list(rows[0])[:3] == ["fold", "stage", "image_id"]
    summary = json.loads((tmp_path / "report.json").read_text())["summary"]
    for stage in ("before", "after"):
        for metric in ("dice", "iou", "acc"):
            vals = np.array([float(r[metric]) for r in rows if r["stage"] == stage])
            assert summary[stage][metric]["mean"] == pytest.approx(vals.mean(), abs=1e-12)
            assert summary[stage][metric]["sd"] == pytest.approx(vals.std(), abs=1e-12)
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert timing["report"]["wall_clock_seconds"] > 0


def test_cv_needs_enough_samples():
    with pytest.raises(ValueError):
        T.cross_validate(_cfg(epochs=1, folds=3), _small_phantoms(2))


# ---------------------------------------------------------------- ablation

def test_grid_matches_check_marks():
    assert [(r.enable_pdc, r.enable_se, r.postprocess) for r in T.MODULE_GRID] == [
        (False, False, False), (True, False, False), (False, True, False), (True, True, False), (True, True, True),
    ]
    assert all(r.loss == "dice" for r in T.MODULE_GRID)
    assert [r.loss for r in T.LOSS_GRID] == ["ssim", "bce", "dice"]
    assert all(r.enable_pdc and r.enable_se for r in T.LOSS_GRID)


def test_row_config():
    cfg = _cfg()
    rc = T.row_config(cfg, T.LOSS_GRID[0])
    assert rc.loss is LossKind.ssim and rc.model.enable_pdc and rc.model.enable_se
    base = T.row_config(cfg, T.MODULE_GRID[0])
    assert not base.model.enable_pdc and not base.model.enable_se
    assert base.model.base_channels == cfg.model.base_channels


def test_ablate_reuses_training(monkeypatch):
    calls = []

    def fake_cv(cfg, samples, log=None, label=""):
        calls.append((cfg.model.enable_pdc, cfg.model.enable_se, cfg.loss.value))
        return T.ExperimentReport({}, [["a"]], [], [], label=label)

    monkeypatch.setattr(T, "cross_validate", fake_cv)
    res = T.ablate(_cfg(), samples=[])
    assert len(res.module_rows) == 5 and len(res.loss_rows) == 3
    # base+PDC+SE, its post-processed twin and the dice loss row share one training
    assert len(calls) == 6 and len(set(calls)) == 6
    assert [rep.label for _, rep in res.module_rows] == [r.name for r in T.MODULE_GRID]
