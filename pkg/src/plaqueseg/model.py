"""Parallel three-decoder segmentation network with dilation pyramids and
channel attention, plus the binary checkpoint format.

Layout (base width ``b``)::

    enc1..enc5   two conv-BN-ReLU + 2x2 max pool, widths b*(1, 2, 4, 8, 16)
    taps         pooled outputs at stride 8, 16, 32
    pdc8/16/32   dilation pyramid on each tap (optional)
    dec8/16/32   3/4/5 x (upsample2x halving width, conv-BN-ReLU)
    fusion       concat -> SE gate (optional) -> 1x1 conv -> channel softmax
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .autodiff import Parameter, ShapeError, Tensor, get_default_dtype, no_grad
from .layers import (
    BatchNormState,
    Conv2dParams,
    PdcParams,
    SeBlockParams,
    batchnorm2d,
    concat_channels,
    conv2d,
    maxpool2d,
    pdc_block,
    relu,
    se_block,
    softmax_channels,
    upsample2x,
)

STRIDES = (8, 16, 32)
DECODER_STAGES = {8: 3, 16: 4, 32: 5}


class ConfigError(ValueError):
    pass


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def parse_size(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    parts = str(value).lower().replace(",", "x").split("x")
    if len(parts) == 1:
        return int(parts[0]), int(parts[0])
    if len(parts) != 2:
        raise ConfigError(f"bad size {value!r}; expected HxW")
    return int(parts[0]), int(parts[1])


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    num_classes: int = 2
    enable_pdc: bool = True
    enable_se: bool = True
    se_reduction: int = 16
    input_size: tuple = (128, 128)

    def __post_init__(self):
        object.__setattr__(self, "input_size", parse_size(self.input_size))

    def validate(self) -> "ModelConfig":
        h, w = self.input_size
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.num_classes != 2:
            raise ConfigError("only two-class (background/plaque) output is supported")
        if self.se_reduction < 1:
            raise ConfigError("se_reduction must be positive")
        if h <= 0 or w <= 0 or h % 32 or w % 32:
            raise ConfigError(f"input_size must be positive multiples of 32, got {h}x{w}")
        return self

    @property
    def encoder_widths(self) -> tuple:
        return tuple(self.base_channels * m for m in (1, 2, 4, 8, 16))

    @property
    def decoder_width(self) -> int:
        return self.base_channels // 2

    def to_text(self) -> str:
        """Canonical ``key = value`` text, keys sorted."""
        out = []
        for f in sorted(fields(self), key=lambda f: f.name):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif f.name == "input_size":
                v = f"{v[0]}x{v[1]}"
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown model key {key!r}")
            if isinstance(value, str):
                if key in ("enable_pdc", "enable_se"):
                    value = _parse_bool(value)
                elif key == "input_size":
                    value = parse_size(value)
                else:
                    value = int(value)
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        mapping = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            mapping[key.strip()] = value.strip()
        return cls.from_mapping(mapping)


class PaNet:
    """Assembled network. Parameters are held in creation order."""

    def __init__(self, config: ModelConfig, layers: dict):
        self.config = config
        self.layers = layers
        self._params = []
        for block in layers.values():
            self._params += block.parameters()
        names = [p.name for p in self._params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.training = True

    def parameters(self) -> list[Parameter]:
        """All parameters, including non-trainable batch-norm statistics."""
        return list(self._params)

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self._params if p.trainable]

    def named_parameters(self) -> dict:
        return {p.name: p for p in self._params}

    def zero_grad(self) -> None:
        for p in self._params:
            p.zero_grad()

    def train(self) -> "PaNet":
        self._set_mode(True)
        return self

    def eval(self) -> "PaNet":
        self._set_mode(False)
        return self

    def _set_mode(self, training: bool) -> None:
        self.training = training
        for block in self.layers.values():
            if isinstance(block, BatchNormState):
                block.training = training

    @property
    def dtype(self):
        return self._params[0].dtype

    def __call__(self, images) -> Tensor:
        return forward(self, images)


def _conv_bn(layers, name, cin, cout, rng, dtype):
    layers[f"{name}.conv"] = Conv2dParams.create(f"{name}.conv", cin, cout, 3, rng, padding=1, dtype=dtype)
    layers[f"{name}.bn"] = BatchNormState.create(f"{name}.bn", cout, dtype=dtype)


def build(config: ModelConfig, seed: int = 0, dtype=None) -> PaNet:
    """He-initialised network; identical seeds give bit-identical weights."""
    config.validate()
    dtype = dtype or get_default_dtype()
    rng = rngmod.generator(seed, "model-init")
    layers = {}
    cin = 1
    for i, width in enumerate(config.encoder_widths, start=1):
        _conv_bn(layers, f"enc{i}.1", cin, width, rng, dtype)
        _conv_bn(layers, f"enc{i}.2", width, width, rng, dtype)
        cin = width
    tap_widths = {8: config.encoder_widths[2], 16: config.encoder_widths[3], 32: config.encoder_widths[4]}
    if config.enable_pdc:
        for s in STRIDES:
            layers[f"pdc{s}"] = PdcParams.create(f"pdc{s}", tap_widths[s], rng, dtype=dtype)
    for s in STRIDES:
        width = tap_widths[s]
        for k in range(1, DECODER_STAGES[s] + 1):
            half = width // 2
            layers[f"dec{s}.{k}.up"] = Conv2dParams.create_transposed(f"dec{s}.{k}.up", width, half, rng, dtype=dtype)
            _conv_bn(layers, f"dec{s}.{k}", half, half, rng, dtype)
            width = half
    fused = 3 * config.decoder_width
    if config.enable_se:
        layers["se"] = SeBlockParams.create("se", fused, rng, reduction=config.se_reduction, dtype=dtype)
    layers["head"] = Conv2dParams.create("head", fused, config.num_classes, 1, rng, dtype=dtype)
    return PaNet(config, layers)


def _cbr(model, name, x):
    return relu(batchnorm2d(conv2d(x, model.layers[f"{name}.conv"]), model.layers[f"{name}.bn"]))


def forward(model: PaNet, images, check_size: bool = True) -> Tensor:
    """N x 1 x H x W images in [0, 1] -> N x 2 x H x W class probabilities.

    Channel 1 is the plaque probability. With ``check_size=False`` any H, W
    that are multiples of 32 are accepted (the network is fully
    convolutional).
    """
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=model.dtype))
    cfg = model.config
    expected = tuple(cfg.input_size)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError("forward", x.shape, (None, 1) + expected)
    if check_size and tuple(x.shape[2:]) != expected:
        raise ShapeError("forward", x.shape, (None, 1) + expected)
    if x.shape[2] % 32 or x.shape[3] % 32:
        raise ShapeError("forward", x.shape, detail="H and W must be multiples of 32")
    taps = {}
    for i in range(1, 6):
        x = _cbr(model, f"enc{i}.1", x)
        x = _cbr(model, f"enc{i}.2", x)
        x = maxpool2d(x)
        if 2 ** i in STRIDES:
            taps[2 ** i] = x
    outputs = []
    for s in STRIDES:
        y = taps[s]
        if cfg.enable_pdc:
            y = pdc_block(y, model.layers[f"pdc{s}"])
        for k in range(1, DECODER_STAGES[s] + 1):
            y = upsample2x(y, model.layers[f"dec{s}.{k}.up"])
            y = _cbr(model, f"dec{s}.{k}", y)
        outputs.append(y)
    fused = concat_channels(outputs)
    if cfg.enable_se:
        fused = se_block(fused, model.layers["se"])
    return softmax_channels(conv2d(fused, model.layers["head"]))


def predict_proba(model: PaNet, images: np.ndarray) -> np.ndarray:
    """Plaque probability for an H x W image or an N x H x W stack.

    Sizes that are not multiples of 32 are reflect-padded on the
    right/bottom and the result is cropped back.
    """
    images = np.asarray(images)
    single = images.ndim == 2
    if single:
        images = images[None]
    h, w = images.shape[1:]
    ph, pw = -h % 32, -w % 32
    if ph or pw:
        images = np.pad(images, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    with no_grad():
        probs = forward(model, images[:, None].astype(model.dtype), check_size=False)
    out = probs.data[:, 1, :h, :w].astype(np.float64)
    return out[0] if single else out


# ---------------------------------------------------------------- checkpoints

MAGIC = b"PANT"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic, truncated payload or malformed record."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    """Config echo disagrees with the requested config, or names differ."""


def checkpoint_bytes(model: PaNet) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(model.parameters()))]
    for p in model.parameters():
        name = p.name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    echo = model.config.to_text().encode("utf-8")
    chunks.append(struct.pack("<I", len(echo)) + echo)
    return b"".join(chunks)


def save_checkpoint(model: PaNet, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"truncated checkpoint at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_checkpoint(buf: bytes):
    """Return (config, [(name, array)]) without building a model."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("not a checkpoint (bad magic)")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    records = []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"bad parameter name: {exc}") from None
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        records.append((name, data))
    (elen,) = r.unpack("<I")
    try:
        config = ModelConfig.from_text(r.take(elen).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointFormatError(f"bad config echo: {exc}") from None
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes after config echo")
    return config, records


def load_checkpoint(path, config: ModelConfig | None = None, dtype=None) -> PaNet:
    """Build a model from a checkpoint; refuses any config/name/shape mismatch."""
    stored, records = parse_checkpoint(Path(path).read_bytes())
    if config is not None and config != stored:
        raise CheckpointConfigError(
            f"checkpoint config does not match requested config:\n{stored.to_text()}vs\n{config.to_text()}"
        )
    model = build(stored, seed=0, dtype=dtype)
    params = model.named_parameters()
    names = [n for n, _ in records]
    if names != [p.name for p in model.parameters()]:
        missing = sorted(set(params) - set(names))
        extra = sorted(set(names) - set(params))
        raise CheckpointConfigError(f"parameter names differ (missing {missing}, extra {extra})")
    for name, data in records:
        p = params[name]
        if tuple(data.shape) != p.shape:
            raise CheckpointShapeError(f"{name}: checkpoint shape {data.shape} != model shape {p.shape}")
    for name, data in records:
        params[name].data[...] = data
    return model


# ---------------------------------------------------------------- summary

@dataclass(frozen=True)
class SummaryRow:
    name: str
    shape: tuple
    count: int
    trainable: bool


@dataclass(frozen=True)
class ParamSummary:
    rows: tuple
    total: int
    buffers: int

    def __str__(self):
        width = max(len(r.name) for r in self.rows)
        lines = [f"{'name':<{width}}  {'shape':<18} {'count':>9}"]
        for r in self.rows:
            tag = "" if r.trainable else "  (buffer)"
            lines.append(f"{r.name:<{width}}  {str(r.shape):<18} {r.count:>9}{tag}")
        lines.append(f"trainable parameters: {self.total}")
        lines.append(f"buffers: {self.buffers}")
        return "\n".join(lines)


def param_summary(model: PaNet) -> ParamSummary:
    rows = tuple(SummaryRow(p.name, p.shape, int(p.data.size), p.trainable) for p in model.parameters())
    return ParamSummary(
        rows,
        sum(r.count for r in rows if r.trainable),
        sum(r.count for r in rows if not r.trainable),
    )
