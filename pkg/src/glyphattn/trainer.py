"""Alternate optimization loop.

Each step: forward pass, masks from the step's own attention (no gradient),
all losses against those frozen masks, one joint Adam step over every
parameter group.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig
from .denoiser import NoiseSchedule, forward_diffuse, predict_noise
from .evaluation import EvalReport, MetricsRecord, eval_model, model_attention_fn
from .glyphdata import GlyphSample, crop_text_region, load_corpus
from .gradcore import Tape, adam_step, backward, zero_grad
from .losses import (
    LossReport,
    LossWeights,
    align_loss,
    attention_loss,
    combine,
    diffusion_mse,
    id_loss,
    masked_diffusion_loss,
    mean_attention,
    total_loss,
    warmup_mask_loss,
)
from .maskops import latent_char_masks, union_masks
from .model import TrainState, group
from .textenc import align_features, classify_chars, encode_text

log = logging.getLogger(__name__)


def tune_allocator() -> None:
    """Keep freed numpy buffers in the heap (glibc only).

    Each step allocates and frees ~100 MB of temporaries; returning them to
    the OS makes every step re-fault all of those pages.
    """
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 32 << 20)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


class CorpusMismatch(ValueError):
    pass


class MaskMutated(RuntimeError):
    pass


@dataclass
class Batch:
    z0: np.ndarray
    region: np.ndarray
    char_masks: np.ndarray
    active: np.ndarray
    texts: list
    labels: list
    crops: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[GlyphSample], cfg: ModelConfig) -> "Batch":
        if not samples:
            raise ValueError("empty batch")
        return cls(
            z0=np.stack([s.image for s in samples]),
            region=np.stack([s.region_mask for s in samples]),
            char_masks=np.stack([s.char_masks for s in samples]),
            active=np.stack([s.active() for s in samples]),
            texts=[s.text for s in samples],
            labels=[s.labels for s in samples],
            crops=np.stack([crop_text_region(s, (cfg.crop_h, cfg.crop_w))[0] for s in samples]),
        )

    def __len__(self) -> int:
        return len(self.texts)


def compute_losses(params, batch: Batch, z_t, t, eps, cfg: TrainConfig, in_warmup: bool, masks=None):
    """Forward pass and every loss term.

    Masks come from this pass's attention unless frozen ones are passed in;
    either way they are plain arrays outside the tape.
    """
    mc = cfg.model
    te, hd, dn = group(params, "textenc"), group(params, "heads"), group(params, "denoiser")
    y = encode_text(te, batch.texts, mc)
    eps_hat, stack = predict_noise(dn, z_t, t, y, batch.region, mc)
    if masks is None:
        masks = latent_char_masks([a.data for a in stack], batch.active, cfg.sigma)
    parts = {
        "l_mask": masked_diffusion_loss(eps, eps_hat, union_masks(masks), cfg.weights.gamma),
        "l_attn": attention_loss(stack, masks),
    }
    t_feat, v_feat = align_features(hd, y, batch.crops, mc)
    parts["l_align"] = align_loss(t_feat, v_feat)
    parts["l_id"] = id_loss(classify_chars(hd, y), batch.labels, batch.active)
    if in_warmup:
        parts["l_warmup"] = warmup_mask_loss(mean_attention(stack), batch.char_masks, batch.active)
    return parts, masks


def train_step(state: TrainState, batch: Batch, cfg: TrainConfig, schedule: NoiseSchedule | None = None):
    schedule = schedule or NoiseSchedule.from_config(cfg.model)
    in_warmup = state.step < cfg.warmup_steps
    b = len(batch)

    t = state.rng.integers(1, schedule.T + 1, size=b)
    eps = state.rng.standard_normal(batch.z0.shape)
    z_t = forward_diffuse(batch.z0, t, eps, schedule)

    params = state.param_list()
    zero_grad(params)
    with Tape() as tape:
        parts, masks = compute_losses(state.params, batch, z_t, t, eps, cfg, in_warmup)
        total = combine(parts, cfg.weights, in_warmup)
    before = masks.checksum()
    report = total_loss(parts, cfg.weights, in_warmup, step=state.step)
    backward(total, tape)
    if masks.checksum() != before:
        raise MaskMutated(f"latent masks changed during backward at step {state.step}")
    tape.clear()
    adam_step(params, [p.grad for p in params], state.adam, cfg.lr)
    state.step += 1
    state.last_masks = masks
    return state, report


def check_corpus(cfg: ModelConfig, man) -> None:
    want = (cfg.height, cfg.width, cfg.channels, cfg.n_max, cfg.num_classes)
    have = (man.height, man.width, man.channels, man.n_max, len(man.alphabet))
    if want != have:
        raise CorpusMismatch(f"corpus (H, W, C, n_max, K)={have} does not match config {want}")


def _eval(state: TrainState, samples, cfg: TrainConfig, schedule) -> EvalReport:
    return eval_model(model_attention_fn(state.params, cfg.model), samples, schedule, cfg.sigma)


@dataclass
class TrainResult:
    state: TrainState
    metrics_path: Path
    final_checkpoint: Path
    evals: dict


def train(cfg: TrainConfig, resume: str | Path | None = None, samples=None, eval_samples=None) -> TrainResult:
    """Run ``cfg.total_steps`` steps, checkpointing and evaluating every ``eval_every``."""
    tune_allocator()
    if samples is None:
        man, samples = load_corpus(cfg.corpus)
        check_corpus(cfg.model, man)
    if eval_samples is None:
        if cfg.eval_corpus:
            eman, eval_samples = load_corpus(cfg.eval_corpus)
            check_corpus(cfg.model, eman)
        else:
            eval_samples = samples[: cfg.eval_count]
    if len(samples) < cfg.batch_size:
        raise CorpusMismatch(f"corpus has {len(samples)} samples, batch_size is {cfg.batch_size}")

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.log"
    schedule = NoiseSchedule.from_config(cfg.model)
    evals: dict[int, EvalReport] = {}

    if resume is not None:
        state, _ = load_checkpoint(resume, cfg)
        kept = []
        if metrics_path.exists():
            kept = [ln for ln in metrics_path.read_text().splitlines()
                    if ln.strip() and MetricsRecord.from_line(ln).step <= state.step]
        metrics_path.write_text("".join(ln + "\n" for ln in kept))
    else:
        state = TrainState.fresh(cfg)
        rep = _eval(state, eval_samples, cfg, schedule)
        evals[0] = rep
        metrics_path.write_text(MetricsRecord(0, miou=rep.mean).to_line() + "\n")
        save_checkpoint(out / f"ckpt_{0:06d}.bin", state, cfg)

    with metrics_path.open("a") as mlog:
        while state.step < cfg.total_steps:
            t0 = time.perf_counter()
            idx = state.rng.choice(len(samples), size=cfg.batch_size, replace=False)
            batch = Batch.from_samples([samples[i] for i in idx], cfg.model)
            state, report = train_step(state, batch, cfg, schedule)
            miou_val = None
            if state.step % cfg.eval_every == 0 or state.step == cfg.total_steps:
                rep = _eval(state, eval_samples, cfg, schedule)
                evals[state.step] = rep
                miou_val = rep.mean
                save_checkpoint(out / f"ckpt_{state.step:06d}.bin", state, cfg)
                log.info("step %d total=%.4f miou=%.4f", state.step, report.total, rep.mean)
            wall = int(round((time.perf_counter() - t0) * 1000))
            mlog.write(MetricsRecord.from_report(state.step, report, miou_val, wall).to_line() + "\n")
            mlog.flush()

    final = out / "final.bin"
    save_checkpoint(final, state, cfg)
    return TrainResult(state, metrics_path, final, evals)


MSE_FRACTIONS = (0.10, 0.25, 0.50, 0.75, 0.90)


def eval_diffusion_mse(state: TrainState, samples, cfg: TrainConfig, noise_seed: int = 77) -> float:
    """Plain noise-prediction MSE on fixed timesteps and noise (no masks, no weighting)."""
    mc = cfg.model
    schedule = NoiseSchedule.from_config(mc)
    te, dn = group(state.params, "textenc"), group(state.params, "denoiser")
    vals = []
    for start in range(0, len(samples), 16):
        batch = Batch.from_samples(samples[start : start + 16], mc)
        for j, frac in enumerate(MSE_FRACTIONS):
            tt = max(1, int(round(frac * schedule.T)))
            eps = np.stack([np.random.default_rng([noise_seed, start + i, j]).standard_normal(batch.z0.shape[1:])
                            for i in range(len(batch))])
            z_t = forward_diffuse(batch.z0, tt, eps, schedule)
            eps_hat, _ = predict_noise(dn, z_t, np.full(len(batch), tt), encode_text(te, batch.texts, mc), batch.region, mc)
            vals.append(diffusion_mse(eps, eps_hat).item() * len(batch))
    return float(np.sum(vals) / (len(MSE_FRACTIONS) * len(samples)))


# ablation presets: (label, overrides on LossWeights, keep warm-up?)
LOSS_ROWS = [
    ("Base", dict(gamma=0.0, alpha=0.0, beta=0.0, use_align=False, use_id=False), False),
    ("+L_mask", dict(alpha=0.0, beta=0.0, use_align=False, use_id=False), True),
    ("+L_attn", dict(beta=0.0, use_align=False, use_id=False), True),
    ("+L_align", dict(use_id=False), True),
    ("+L_id", dict(), True),
]
WARMUP_FRACTIONS = (0.10, 0.20, 0.25, 0.30)


@dataclass
class AblationRow:
    label: str
    miou: float
    miou_median: float
    diffusion_mse: float
    l_mask: float
    l_attn: float
    l_align: float
    l_id: float


def ablation_configs(cfg: TrainConfig, preset: str) -> list[tuple[str, TrainConfig]]:
    rows = []
    if preset == "losses":
        for label, over, keep_warm in LOSS_ROWS:
            weights = dataclasses.replace(cfg.weights, **over)
            rows.append((label, dataclasses.replace(
                cfg, weights=weights, warmup_steps=cfg.warmup_steps if keep_warm else 0)))
    elif preset == "warmup":
        for frac in WARMUP_FRACTIONS:
            ws = int(round(frac * cfg.total_steps))
            rows.append((f"warmup={ws}", dataclasses.replace(cfg, warmup_steps=ws)))
    else:
        raise ValueError(f"unknown ablation preset {preset!r}; choose 'losses' or 'warmup'")
    return rows


def ablation_matrix(cfg: TrainConfig, preset: str, samples=None, eval_samples=None) -> list[AblationRow]:
    """One training run per row, shared seed and corpus; final mIoU and losses per row."""
    if samples is None:
        man, samples = load_corpus(cfg.corpus)
        check_corpus(cfg.model, man)
    if eval_samples is None:
        eval_samples = load_corpus(cfg.eval_corpus)[1] if cfg.eval_corpus else samples[: cfg.eval_count]
    table = []
    for label, rcfg in ablation_configs(cfg, preset):
        rcfg = dataclasses.replace(rcfg, out_dir=str(Path(cfg.out_dir) / label.replace("+", "plus_").replace("=", "_")))
        res = train(rcfg, samples=samples, eval_samples=eval_samples)
        final = res.evals[res.state.step]
        last = [MetricsRecord.from_line(ln) for ln in res.metrics_path.read_text().splitlines()][-1]
        table.append(AblationRow(
            label, final.mean, final.median, eval_diffusion_mse(res.state, eval_samples, rcfg),
            last.l_mask, last.l_attn, last.l_align, last.l_id,
        ))
    return table


def format_table(rows: list[AblationRow]) -> str:
    head = f"{'row':<14}{'mIoU':>9}{'median':>9}{'diff_mse':>10}{'l_mask':>9}{'l_attn':>9}{'l_align':>9}{'l_id':>9}"
    lines = [head]
    for r in rows:
        lines.append(
            f"{r.label:<14}{r.miou:>9.4f}{r.miou_median:>9.4f}{r.diffusion_mse:>10.5f}"
            f"{r.l_mask:>9.4f}{r.l_attn:>9.5f}{r.l_align:>9.4f}{r.l_id:>9.4f}"
        )
    return "\n".join(lines)
