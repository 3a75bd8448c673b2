"""mIoU evaluation, attention overlays, and the metrics log."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import formats
from .config import ModelConfig, TrainConfig
from .denoiser import NoiseSchedule, forward_diffuse, predict_noise
from .glyphdata import GlyphSample, grayscale
from .gradcore import Tensor
from .losses import LossReport
from .maskops import LatentCharMasks, latent_char_masks
from .model import group
from .textenc import encode_text

EVAL_FRACTIONS = (0.25, 0.5, 0.75)
EVAL_NOISE_SEED = 20240


def miou(masks, gt, active) -> float:
    """Mean over active tokens of |M & S| / |M | S|; an empty-empty pair scores 1."""
    m = np.asarray(masks) > 0.5
    s = np.asarray(gt) > 0.5
    if m.shape != s.shape:
        raise ValueError(f"mask shapes differ: {m.shape} vs {s.shape}")
    act = np.flatnonzero(np.asarray(active, dtype=bool))
    if act.size == 0:
        raise ValueError("miou needs at least one active position")
    scores = []
    for i in act:
        inter = np.count_nonzero(m[i] & s[i])
        union = np.count_nonzero(m[i] | s[i])
        scores.append(1.0 if union == 0 else inter / union)
    return float(np.mean(scores))


AttentionFn = Callable[[np.ndarray, np.ndarray, np.ndarray, list], list]


def model_attention_fn(params, cfg: ModelConfig) -> AttentionFn:
    te, dn = group(params, "textenc"), group(params, "denoiser")

    def fn(z_t, t, region, texts):
        y = encode_text(te, texts, cfg)
        _, stack = predict_noise(dn, z_t, t, y, region, cfg)
        return [a.data for a in stack]

    return fn


def eval_timesteps(T: int) -> list[int]:
    return [max(1, int(round(f * T))) for f in EVAL_FRACTIONS]


@dataclass
class EvalReport:
    mean: float
    median: float
    per_sample: list[float] = field(default_factory=list)


def eval_model(
    attn_fn: AttentionFn,
    samples: Sequence[GlyphSample],
    schedule: NoiseSchedule,
    sigma: float = 1.0,
    noise_seed: int = EVAL_NOISE_SEED,
    batch: int = 16,
) -> EvalReport:
    """Average attention over the fixed evaluation timesteps, extract masks, score mIoU."""
    ts = eval_timesteps(schedule.T)
    scores: list[float] = []
    for start in range(0, len(samples), batch):
        chunk = samples[start : start + batch]
        z0 = np.stack([s.image for s in chunk])
        region = np.stack([s.region_mask for s in chunk])
        texts = [s.text for s in chunk]
        maps = []
        for j, t in enumerate(ts):
            # per-sample noise so the result does not depend on batching
            eps = np.stack([
                np.random.default_rng([noise_seed, start + i, j]).standard_normal(z0.shape[1:])
                for i in range(len(chunk))
            ])
            z_t = forward_diffuse(z0, t, eps, schedule)
            maps.extend(attn_fn(z_t, np.full(len(chunk), t), region, texts))
        active = np.stack([s.active() for s in chunk])
        m = latent_char_masks(maps, active, sigma)
        for i, s in enumerate(chunk):
            scores.append(miou(m.masks[i], s.char_masks, active[i]))
    return EvalReport(float(np.mean(scores)), float(np.median(scores)), scores)


def eval_checkpoint(path, samples: Sequence[GlyphSample], cfg: TrainConfig | None = None) -> EvalReport:
    from .checkpoint import load_checkpoint

    state, saved = load_checkpoint(path, cfg)
    use = cfg or saved
    return eval_model(
        model_attention_fn(state.params, use.model), samples, NoiseSchedule.from_config(use.model), use.sigma
    )


def render_attention_overlay(sample: GlyphSample, maps, path) -> bytes:
    """Red heatmap per token over the grayscale image, tiled left to right, as binary PPM."""
    if isinstance(maps, LatentCharMasks):
        maps = maps.masks
    maps = maps.data if isinstance(maps, Tensor) else np.asarray(maps, dtype=np.float64)
    gray = np.clip((grayscale(sample.image)[0] + 1.0) / 2.0, 0.0, 1.0) * 255.0
    base = np.repeat(gray[..., None], 3, axis=2)
    tint = np.array([255.0, 0.0, 0.0])
    tiles = []
    for a in maps:
        alpha = np.clip(a, 0.0, 1.0)[..., None]
        tiles.append(base * (1.0 - alpha) + tint * alpha)
    img = np.rint(np.concatenate(tiles, axis=1)).astype(np.uint8)
    h, w = img.shape[:2]
    data = f"P6\n{w} {h}\n255\n".encode() + img.tobytes()
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise OSError(f"cannot write overlay {path}: {e}") from e
    return data


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P6":
        raise formats.FormatError(f"{path}: not a binary PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


@dataclass
class MetricsRecord:
    step: int
    l_mask: float = 0.0
    l_attn: float = 0.0
    l_align: float = 0.0
    l_id: float = 0.0
    l_warmup: float = 0.0
    total: float = 0.0
    miou: float | None = None
    wall_ms: int = 0

    @classmethod
    def from_report(cls, step: int, rep: LossReport, miou_val=None, wall_ms: int = 0) -> "MetricsRecord":
        return cls(step, **asdict(rep), miou=miou_val, wall_ms=wall_ms)

    def to_line(self) -> str:
        return formats.format_record(OrderedDict((f.name, getattr(self, f.name)) for f in fields(self)))

    @classmethod
    def from_line(cls, line: str) -> "MetricsRecord":
        rec = formats.parse_record(line)
        kw = {}
        for f in fields(cls):
            raw = rec[f.name]
            if f.name in ("step", "wall_ms"):
                kw[f.name] = int(raw)
            elif f.name == "miou":
                kw[f.name] = None if raw == "none" else float(raw)
            else:
                kw[f.name] = float(raw)
        return cls(**kw)


def read_metrics(path) -> list[MetricsRecord]:
    recs = [MetricsRecord.from_line(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
    for a, b in zip(recs, recs[1:]):
        if b.step <= a.step:
            raise formats.FormatError(f"{path}: steps not increasing ({a.step} then {b.step})")
    return recs
