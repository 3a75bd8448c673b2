"""Character-level text encoder and the auxiliary heads.

Parameters live in plain ``OrderedDict[str, Tensor]`` maps so the trainer can
merge groups and the checkpoint writer can walk them by name.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .config import ModelConfig
from .gradcore import Tensor, matmul, softmax_rows, take_rows

Params = "OrderedDict[str, Tensor]"


def _dense(rng, fan_in, fan_out):
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)), requires_grad=True)


def _bias(n):
    return Tensor(np.zeros(n), requires_grad=True)


def init_textenc(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    p = OrderedDict()
    # row K is the pad embedding
    p["char_emb"] = Tensor(rng.normal(0.0, 1.0, size=(cfg.num_classes + 1, cfg.d_emb)), requires_grad=True)
    p["pos_emb"] = Tensor(rng.normal(0.0, 0.5, size=(cfg.n_max, cfg.d_emb)), requires_grad=True)
    p["w1"] = _dense(rng, cfg.d_emb, cfg.d)
    p["b1"] = _bias(cfg.d)
    p["w2"] = _dense(rng, cfg.d, cfg.d)
    p["b2"] = _bias(cfg.d)
    return p


def init_heads(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    p = OrderedDict()
    p["text_w"] = _dense(rng, cfg.d * cfg.n_max, cfg.d_align)
    p["text_b"] = _bias(cfg.d_align)
    p["img_w"] = _dense(rng, cfg.n_patches, cfg.d_img)
    p["img_b"] = _bias(cfg.d_img)
    p["vis_w"] = _dense(rng, cfg.d_img, cfg.d_align)
    p["vis_b"] = _bias(cfg.d_align)
    p["cls_w"] = _dense(rng, cfg.d, cfg.num_classes)
    p["cls_b"] = _bias(cfg.num_classes)
    return p


def token_indices(texts, n_max: int, num_classes: int) -> np.ndarray:
    """(B, n_max) character indices, padded with ``num_classes``."""
    idx = np.full((len(texts), n_max), num_classes, dtype=np.int64)
    for b, t in enumerate(texts):
        if len(t) > n_max:
            raise ValueError(f"text of length {len(t)} exceeds n_max={n_max}")
        for i, c in enumerate(t):
            if not 0 <= c < num_classes:
                raise IndexError(f"character index {c} out of range [0, {num_classes})")
            idx[b, i] = c
    return idx


def encode_text(p: Params, texts, cfg: ModelConfig) -> Tensor:
    """Text embeddings y of shape (B, n_max, d).

    Row i is MLP(char_emb[c_i] + pos_emb[i]); pad rows get MLP(pad_emb) so
    they are identical across positions.
    """
    idx = token_indices(texts, cfg.n_max, cfg.num_classes)
    not_pad = (idx < cfg.num_classes).astype(np.float64)[..., None]
    pos = take_rows(p["pos_emb"], np.arange(cfg.n_max)).reshape(1, cfg.n_max, cfg.d_emb)
    e = take_rows(p["char_emb"], idx) + pos * not_pad
    h = (matmul(e, p["w1"]) + p["b1"]).tanh()
    return matmul(h, p["w2"]) + p["b2"]


def patch_mean(images: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(B, crop_h, crop_w) -> (B, n_patches) mean over non-overlapping patches."""
    b = images.shape[0]
    imgs = np.asarray(images, dtype=np.float64).reshape(b, cfg.crop_h, cfg.crop_w)
    ph, pw = cfg.patch_h, cfg.patch_w
    blocks = imgs.reshape(b, cfg.crop_h // ph, ph, cfg.crop_w // pw, pw)
    return blocks.mean(axis=(2, 4)).reshape(b, -1)


def image_features(p: Params, images: np.ndarray, cfg: ModelConfig) -> Tensor:
    """The image encoder: patch means followed by a linear map to d_img."""
    if images.shape[-2:] != (cfg.crop_h, cfg.crop_w):
        raise ValueError(f"text image must be {cfg.crop_h}x{cfg.crop_w}, got {images.shape[-2:]}")
    return matmul(Tensor(patch_mean(images, cfg)), p["img_w"]) + p["img_b"]


def align_features(p: Params, y: Tensor, images: np.ndarray, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    b = y.shape[0]
    t_feat = matmul(y.reshape(b, cfg.n_max * cfg.d), p["text_w"]) + p["text_b"]
    v_feat = matmul(image_features(p, images, cfg), p["vis_w"]) + p["vis_b"]
    return t_feat, v_feat


def classify_chars(p: Params, y: Tensor) -> Tensor:
    return softmax_rows(matmul(y, p["cls_w"]) + p["cls_b"])
