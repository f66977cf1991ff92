"""Run configuration and its flat ``key = value`` text format.

Keys without a prefix belong to the training run; ``model.*`` and
``postprocess.*`` keys configure the network and the mask refinement. Blank
lines and ``#`` comments are ignored.

    learning_rate = 0.001
    epochs = 30
    model.base_channels = 8
    model.enable_se = true
    postprocess.area_ratio = 5
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .losses import LossKind
from .model import ConfigError, ModelConfig, _parse_bool, parse_size
from .postprocess import PostprocessConfig, StructuringElement


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 2
    loss: LossKind = LossKind.dice
    seed: int = 0
    folds: int = 10
    phantoms: int = 30
    data_root: str = ""
    include_original: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))

    def validate(self) -> "TrainConfig":
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.phantoms < 1:
            raise ConfigError("phantoms must be >= 1")
        self.model.validate()
        return self

    def with_overrides(self, overrides: dict) -> "TrainConfig":
        return apply_overrides(self, overrides)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(to_mapping(self).items()))


_TOP_TYPES = {
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "loss": LossKind,
    "seed": int,
    "folds": int,
    "phantoms": int,
    "data_root": str,
    "include_original": _parse_bool,
}
_POST_KEYS = ("area_ratio", "connectivity", "kernel_size", "iterations")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, LossKind):
        return v.value
    if isinstance(v, tuple):
        return f"{v[0]}x{v[1]}"
    return str(v)


def to_mapping(cfg: TrainConfig) -> dict:
    out = {name: _fmt(getattr(cfg, name)) for name in _TOP_TYPES}
    for f in fields(cfg.model):
        out[f"model.{f.name}"] = _fmt(getattr(cfg.model, f.name))
    pp = cfg.postprocess
    out["postprocess.area_ratio"] = _fmt(pp.area_ratio)
    out["postprocess.connectivity"] = _fmt(pp.connectivity)
    out["postprocess.kernel_size"] = _fmt(pp.element.size)
    out["postprocess.iterations"] = _fmt(pp.element.iterations)
    return out


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    top, model, post = {}, {}, {}
    for key, value in overrides.items():
        key = key.strip()
        prefix, _, name = key.partition(".")
        try:
            if not name:
                if key not in _TOP_TYPES:
                    raise ConfigError(f"unknown config key {key!r}")
                top[key] = _TOP_TYPES[key](value) if isinstance(value, str) else value
            elif prefix == "model":
                model[name] = value
            elif prefix == "postprocess":
                if name not in _POST_KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                post[name] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    if model:
        merged = {f.name: getattr(cfg.model, f.name) for f in fields(cfg.model)}
        merged.update(model)
        try:
            top["model"] = ModelConfig.from_mapping(merged)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if post:
        pp = cfg.postprocess
        try:
            element = StructuringElement(
                size=int(post.get("kernel_size", pp.element.size)),
                iterations=int(post.get("iterations", pp.element.iterations)),
            )
            top["postprocess"] = PostprocessConfig(
                area_ratio=float(post.get("area_ratio", pp.area_ratio)),
                connectivity=int(post.get("connectivity", pp.connectivity)),
                element=element,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return replace(cfg, **top)


def parse_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def parse_override(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not key=value")
    return key.strip(), value.strip()


def load_config(path=None, overrides=()) -> TrainConfig:
    cfg = TrainConfig()
    if path is not None:
        cfg = apply_overrides(cfg, parse_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg = apply_overrides(cfg, dict(parse_override(o) if isinstance(o, str) else o for o in overrides))
    return cfg.validate()


__all__ = ["TrainConfig", "ConfigError", "load_config", "parse_text", "apply_overrides",
           "to_mapping", "parse_size"]
