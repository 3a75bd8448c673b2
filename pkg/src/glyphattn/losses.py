"""Training objectives and their weighted combination.

All reductions are means: per example over the relevant positions/pixels,
then over the batch. Masks are plain arrays and never carry gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gradcore import DimensionError, Tensor, custom_op

TERMS = ("l_mask", "l_attn", "l_align", "l_id", "l_warmup")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term: str, value, step: int | None = None):
        where = "" if step is None else f" at step {step}"
        super().__init__(f"non-finite {term}={value}{where}")
        self.term = term
        self.step = step


@dataclass
class LossWeights:
    alpha: float = 0.01
    beta: float = 0.001
    gamma: float = 1.0
    warmup_weight: float = 1.0
    use_align: bool = True
    use_id: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "warmup_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


@dataclass
class LossReport:
    l_mask: float = 0.0
    l_attn: float = 0.0
    l_align: float = 0.0
    l_id: float = 0.0
    l_warmup: float = 0.0
    total: float = 0.0


def _batched(x: np.ndarray, ndim: int) -> np.ndarray:
    return x if x.ndim == ndim else x[None]


def diffusion_mse(eps: np.ndarray, eps_hat: Tensor) -> Tensor:
    return ((Tensor(eps) - eps_hat) * (Tensor(eps) - eps_hat)).mean()


def masked_diffusion_loss(eps, eps_hat: Tensor, mask_union, gamma: float) -> Tensor:
    """mean(((1 + gamma*M_k) * (eps - eps_hat))^2); M_k is broadcast over channels."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != eps_hat.shape:
        raise DimensionError(f"noise {eps.shape} vs prediction {eps_hat.shape}")
    m = np.asarray(mask_union, dtype=np.float64)
    if m.shape != eps.shape[:-3] + eps.shape[-2:]:
        raise DimensionError(f"mask {m.shape} does not match noise {eps.shape}")
    weight = 1.0 + gamma * m[..., None, :, :]
    r = (Tensor(eps) - eps_hat) * weight
    return (r * r).mean()


def _token_weights(active: np.ndarray, per_token_items: int) -> np.ndarray:
    """(B, N) weights giving a per-example mean over active tokens, then a batch mean."""
    counts = active.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("example with no active tokens")
    return active / (counts * per_token_items * active.shape[0])


def attention_loss(stack, masks) -> Tensor:
    """Mean squared gap between every layer's map and the frozen mask, over active tokens."""
    m = masks.masks
    act = masks.active
    if m.ndim == 3:
        m, act = m[None], act[None]
        stack = [a.reshape((1,) + a.shape) for a in stack]
    _, _, h, w = m.shape
    for a in stack:
        if a.shape != m.shape:
            raise DimensionError(f"attention {a.shape} vs masks {m.shape}")
    wts = _token_weights(act.astype(np.float64), len(stack) * h * w)[..., None, None]
    total = None
    for a in stack:
        d = a - Tensor(m)
        term = (d * d * wts).sum()
        total = term if total is None else total + term
    return total


def align_loss(t_feat: Tensor, v_feat: Tensor) -> Tensor:
    """1 - cosine(t, v), averaged over rows; a zero-norm row contributes 1 with no gradient."""
    if t_feat.shape != v_feat.shape:
        raise DimensionError(f"feature shapes differ: {t_feat.shape} vs {v_feat.shape}")
    t = t_feat.data.reshape(-1, t_feat.shape[-1])
    v = v_feat.data.reshape(-1, v_feat.shape[-1])
    nt = np.linalg.norm(t, axis=1)
    nv = np.linalg.norm(v, axis=1)
    ok = (nt > 0) & (nv > 0)
    snt = np.where(ok, nt, 1.0)
    snv = np.where(ok, nv, 1.0)
    cos = np.where(ok, (t * v).sum(axis=1) / (snt * snv), 0.0)
    rows = t.shape[0]
    val = np.asarray(float(np.mean(1.0 - cos)))

    def vjp(g):
        scale = (-g / rows) * ok
        gt = scale[:, None] * (v / (snt * snv)[:, None] - cos[:, None] * t / (snt**2)[:, None])
        gv = scale[:, None] * (t / (snt * snv)[:, None] - cos[:, None] * v / (snv**2)[:, None])
        return gt.reshape(t_feat.shape), gv.reshape(v_feat.shape)

    return custom_op(val, (t_feat, v_feat), vjp)


def id_loss(probs: Tensor, labels, active) -> Tensor:
    """Mean cross-entropy of the true class over active positions.

    probs: (B, N, K) or (N, K); labels: per example, one class per active position.
    """
    single = probs.ndim == 2
    if single:
        probs = probs.reshape((1,) + probs.shape)
        labels, active = [labels], np.asarray(active)[None]
    b, n, k = probs.shape
    act = np.asarray(active, dtype=bool).reshape(b, n)
    onehot = np.zeros((b, n, k))
    for i in range(b):
        pos = np.flatnonzero(act[i])
        lab = list(labels[i])
        if len(lab) < len(pos):
            raise ValueError("fewer labels than active positions")
        for p_, c in zip(pos, lab):
            if not 0 <= c < k:
                raise IndexError(f"label {c} out of range [0, {k})")
            onehot[i, p_, c] = 1.0
    p_true = (probs * onehot).sum(axis=-1) + (~act).astype(np.float64)
    wts = _token_weights(act.astype(np.float64), 1)
    return -(p_true.log() * wts).sum()


def mean_attention(stack) -> Tensor:
    total = stack[0]
    for a in stack[1:]:
        total = total + a
    return total * (1.0 / len(stack))


def warmup_mask_loss(mean_attn: Tensor, gt_masks, active, eps: float = 1e-6) -> Tensor:
    """Per-pixel binary cross-entropy between clamped layer-mean attention and GT masks."""
    s = np.asarray(gt_masks, dtype=np.float64)
    if s.shape != mean_attn.shape:
        raise DimensionError(f"attention {mean_attn.shape} vs GT masks {s.shape}")
    act = np.asarray(active, dtype=np.float64)
    if s.ndim == 3:
        s, act = s[None], act[None]
        mean_attn = mean_attn.reshape((1,) + mean_attn.shape)
    h, w = s.shape[-2:]
    wts = _token_weights(act, h * w)[..., None, None]
    a = mean_attn.clip(eps, 1.0 - eps)
    bce = -(Tensor(s) * a.log() + Tensor(1.0 - s) * (1.0 - a).log())
    return (bce * wts).sum()


def combine(parts: dict, weights: LossWeights, in_warmup: bool):
    """Weighted total; works on floats or Tensors."""
    aux = 0.0
    if weights.use_align:
        aux = aux + parts["l_align"]
    if weights.use_id:
        aux = aux + parts["l_id"]
    total = parts["l_mask"] + weights.alpha * parts["l_attn"] + weights.beta * aux
    if in_warmup:
        total = total + weights.warmup_weight * parts["l_warmup"]
    return total


def total_loss(parts: dict, weights: LossWeights, in_warmup: bool, step: int | None = None) -> LossReport:
    vals = {}
    for name in TERMS:
        v = parts.get(name, 0.0)
        v = v.item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(v):
            raise NonFiniteLoss(name, v, step)
        vals[name] = v
    if not in_warmup:
        vals["l_warmup"] = 0.0
    return LossReport(**vals, total=float(combine(vals, weights, in_warmup)))
