"""Configuration records and their line-record (de)serialization."""
from __future__ import annotations

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

from . import formats
from .losses import LossWeights


@dataclass
class ModelConfig:
    height: int = 32
    width: int = 32
    channels: int = 1
    n_max: int = 8
    num_classes: int = 16
    d_emb: int = 32
    d: int = 32
    d_align: int = 32
    d_img: int = 32
    hidden: int = 32
    layers: int = 3
    crop_h: int = 8
    crop_w: int = 32
    patch_h: int = 2
    patch_w: int = 4
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one attention layer")
        if self.crop_h % self.patch_h or self.crop_w % self.patch_w:
            raise ValueError("crop size must be divisible by patch size")

    @property
    def n_patches(self) -> int:
        return (self.crop_h // self.patch_h) * (self.crop_w // self.patch_w)


@dataclass
class TrainConfig:
    total_steps: int = 2000
    warmup_steps: int = 500
    lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    sigma: float = 1.0
    eval_every: int = 250
    eval_count: int = 50
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    corpus: str = ""
    eval_corpus: str = ""
    out_dir: str = "run"

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(f"warmup_steps={self.warmup_steps} must lie in [0, total_steps={self.total_steps}]")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


def _flatten(obj, prefix="") -> "OrderedDict[str, object]":
    out: OrderedDict[str, object] = OrderedDict()
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out.update(_flatten(v, f"{prefix}{f.name}."))
        else:
            out[f"{prefix}{f.name}"] = v
    return out


def _coerce(typ, raw: str):
    if typ in (bool, "bool"):
        if raw not in ("true", "false"):
            raise ValueError(f"expected true/false, got {raw!r}")
        return raw == "true"
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return "" if raw == "none" else raw


def _build(cls, flat: dict, prefix=""):
    kw = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}{f.name}"
        sub = {"weights": LossWeights, "model": ModelConfig}.get(f.name)
        if sub is not None:
            kw[f.name] = _build(sub, flat, key + ".")
        elif key in flat:
            kw[f.name] = _coerce(f.type, flat[key])
    return cls(**kw)


def config_to_record(cfg: TrainConfig) -> str:
    return formats.format_record(_flatten(cfg))


def config_from_record(line: str) -> TrainConfig:
    flat = dict(formats.parse_record(line))
    known = set(_flatten(TrainConfig()).keys())
    unknown = set(flat) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return _build(TrainConfig, flat)


def load_config(path) -> TrainConfig:
    """Config file: one ``key=value`` per line or a single record line."""
    text = Path(path).read_text()
    toks = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    return config_from_record(" ".join(toks))


def save_config(path, cfg: TrainConfig) -> None:
    Path(path).write_text("\n".join(f"{k}={formats.format_value(v)}" for k, v in _flatten(cfg).items()) + "\n")
