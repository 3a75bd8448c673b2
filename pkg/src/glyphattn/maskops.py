"""Attention maps -> binary latent character masks.

Everything here operates on plain numpy arrays and never touches the tape:
the masks are the discrete half of the alternate optimization and are held
fixed while gradients are taken.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gradcore import Tensor


@dataclass
class LatentCharMasks:
    masks: np.ndarray  # (..., N, H, W) in {0, 1}
    active: np.ndarray  # (..., N) bool

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.masks.tobytes() + self.active.tobytes()).hexdigest()


def _raw(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def aggregate_attention(stack) -> np.ndarray:
    """Layer mean of the attention maps."""
    if len(stack) == 0:
        raise ValueError("empty attention stack")
    maps = [_raw(a) for a in stack]
    shape = maps[0].shape
    for a in maps[1:]:
        if a.shape != shape:
            raise ValueError(f"attention maps have mixed shapes {shape} and {a.shape}")
    total = maps[0].copy()
    for a in maps[1:]:
        total += a
    return total / len(maps)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = math.ceil(3 * sigma)
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    n = x.shape[axis]
    pad = [(0, 0)] * x.ndim
    pad[axis] = (r, r)
    # half-sample reflection (edge pixel repeated); with a symmetric kernel
    # this keeps the operator mass-preserving
    xp = np.pad(x, pad, mode="symmetric")
    out = np.zeros_like(x)
    for j, w in enumerate(k):
        out += w * np.take(xp, np.arange(j, j + n), axis=axis)
    return out


def gaussian_blur(x, sigma: float = 1.0) -> np.ndarray:
    """Separable Gaussian blur over the last two axes (rows, then columns)."""
    k = gaussian_kernel1d(sigma)
    x = _raw(x)
    return _blur_axis(_blur_axis(x, k, x.ndim - 2), k, x.ndim - 1)


def threshold_mask(x) -> np.ndarray:
    """1 where x > mean(x) + 2 std(x) over the last two axes, else 0.

    Population std. A constant map yields all zeros.
    """
    x = _raw(x)
    mean = x.mean(axis=(-2, -1), keepdims=True)
    std = x.std(axis=(-2, -1), keepdims=True)
    out = (x > mean + 2.0 * std).astype(np.float64)
    flat = (x.max(axis=(-2, -1), keepdims=True) == x.min(axis=(-2, -1), keepdims=True))
    return np.where(flat, 0.0, out)


def _active_array(active, n: int, lead: tuple[int, ...]) -> np.ndarray:
    a = np.asarray(active)
    if a.dtype != bool:
        idx = np.asarray(sorted(active), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError(f"active token index outside [0, {n})")
        a = np.zeros(n, dtype=bool)
        a[idx] = True
    return np.broadcast_to(a, lead + (n,)).copy()


def latent_char_masks(stack, active, sigma: float = 1.0) -> LatentCharMasks:
    """Per active token: threshold(blur(layer-mean attention)); others zero."""
    mean_attn = aggregate_attention(stack)
    n = mean_attn.shape[-3]
    act = _active_array(active, n, mean_attn.shape[:-3])
    masks = threshold_mask(gaussian_blur(mean_attn, sigma))
    masks *= act[..., None, None]
    return LatentCharMasks(masks, act)


def union_masks(m: LatentCharMasks) -> np.ndarray:
    """Pixelwise OR over the active token slices -> (..., H, W)."""
    sel = m.masks * m.active[..., None, None]
    return (sel.max(axis=-3) > 0).astype(np.float64)
