"""Toy noise predictor with cross-attention layers, plus the forward process."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .gradcore import DimensionError, Tensor, depthwise_conv3x3, matmul, softmax_rows, take_rows


@dataclass
class NoiseSchedule:
    betas: np.ndarray  # (T,)
    alpha_bar: np.ndarray  # (T+1,), alpha_bar[0] = 1

    @classmethod
    def linear(cls, T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, T)
        return cls(betas, np.concatenate([[1.0], np.cumprod(1.0 - betas)]))

    @classmethod
    def from_config(cls, cfg: ModelConfig) -> "NoiseSchedule":
        return cls.linear(cfg.T, cfg.beta_start, cfg.beta_end)

    @property
    def T(self) -> int:
        return len(self.betas)


def forward_diffuse(z0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(abar_t) z0 + sqrt(1 - abar_t) eps; ``t`` is an int or one per batch row."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise DimensionError(f"noise shape {eps.shape} != image shape {z0.shape}")
    t = np.asarray(t)
    if np.any(t < 0) or np.any(t > schedule.T):
        raise ValueError(f"timestep out of range [0, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    if ab.ndim:
        ab = ab.reshape(ab.shape + (1,) * (z0.ndim - ab.ndim))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def init_denoiser(cfg: ModelConfig, rng: np.random.Generator) -> "OrderedDict[str, Tensor]":
    w, d = cfg.hidden, cfg.d

    def dense(fi, fo):
        return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fi), size=(fi, fo)), requires_grad=True)

    smooth = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0
    p = OrderedDict()
    p["in_w"] = dense(cfg.channels + 1, w)
    p["in_b"] = Tensor(np.zeros(w), requires_grad=True)
    for l in range(cfg.layers):
        p[f"l{l}.temb"] = Tensor(rng.normal(0.0, 0.1, size=(cfg.T + 1, w)), requires_grad=True)
        p[f"l{l}.mix_w"] = dense(w, w)
        p[f"l{l}.mix_b"] = Tensor(np.zeros(w), requires_grad=True)
        p[f"l{l}.dw"] = Tensor(np.repeat(smooth[:, :, None], w, axis=2), requires_grad=True)
        p[f"l{l}.wq"] = dense(w, d)
        p[f"l{l}.wk"] = dense(d, d)
        p[f"l{l}.wv"] = dense(d, w)
        p[f"l{l}.out_w"] = dense(w, w)
        p[f"l{l}.out_b"] = Tensor(np.zeros(w), requires_grad=True)
    p["out_w"] = dense(w, cfg.channels)
    p["out_b"] = Tensor(np.zeros(cfg.channels), requires_grad=True)
    return p


def cross_attention(p, prefix: str, h: Tensor, y: Tensor, hw: tuple[int, int]) -> tuple[Tensor, Tensor]:
    """Pixel queries against token keys.

    h: (B, HW, hidden) pixel features, y: (B, N, d) text embeddings.
    Returns the attended features (B, HW, hidden) and the attention map in
    token-major layout (B, N, H, W).
    """
    b, n_pix, _ = h.shape
    n_tok, d = y.shape[1], y.shape[2]
    if n_pix != hw[0] * hw[1]:
        raise DimensionError(f"{n_pix} pixel rows do not match spatial size {hw}")
    wq, wk, wv = p[f"{prefix}wq"], p[f"{prefix}wk"], p[f"{prefix}wv"]
    if h.shape[-1] != wq.shape[0] or d != wk.shape[0]:
        raise DimensionError(f"attention inputs {h.shape}, {y.shape} do not match layer {prefix}")
    q = matmul(h, wq)
    k = matmul(y, wk)
    v = matmul(y, wv)
    logits = matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(d))
    attn = softmax_rows(logits)  # (B, HW, N)
    out = matmul(matmul(attn, v), p[f"{prefix}out_w"]) + p[f"{prefix}out_b"]
    amap = attn.transpose(0, 2, 1).reshape(b, n_tok, hw[0], hw[1])
    return out, amap


def predict_noise(p, z_t: np.ndarray, t, y: Tensor, region: np.ndarray, cfg: ModelConfig) -> tuple[Tensor, list[Tensor]]:
    """Noise estimate (B, C, H, W) and one attention map per layer.

    The region mask enters as an extra input channel.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    region = np.asarray(region, dtype=np.float64)
    b, c, h, w = z_t.shape
    if (c, h, w) != (cfg.channels, cfg.height, cfg.width) or region.shape != (b, 1, h, w):
        raise DimensionError(f"inputs {z_t.shape} / {region.shape} do not match model config")
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (b,))
    x_in = np.concatenate([z_t, region], axis=1).reshape(b, c + 1, h * w).transpose(0, 2, 1)
    x = matmul(Tensor(x_in), p["in_w"]) + p["in_b"]
    stack = []
    for l in range(cfg.layers):
        pre = f"l{l}."
        temb = take_rows(p[pre + "temb"], t).reshape(b, 1, cfg.hidden)
        hid = (matmul(x + temb, p[pre + "mix_w"]) + p[pre + "mix_b"]).tanh()
        hid = depthwise_conv3x3(hid.reshape(b, h, w, cfg.hidden), p[pre + "dw"]).reshape(b, h * w, cfg.hidden)
        out, amap = cross_attention(p, pre, hid, y, (h, w))
        x = x + hid + out
        stack.append(amap)
    eps = matmul(x, p["out_w"]) + p["out_b"]
    return eps.transpose(0, 2, 1).reshape(b, c, h, w), stack
