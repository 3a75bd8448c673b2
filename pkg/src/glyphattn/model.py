"""Parameter groups and the mutable training state."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig, TrainConfig
from .denoiser import init_denoiser
from .gradcore import AdamState, Tensor
from .textenc import init_heads, init_textenc

GROUPS = ("textenc", "heads", "denoiser")


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> "OrderedDict[str, Tensor]":
    params: OrderedDict[str, Tensor] = OrderedDict()
    for gname, init in zip(GROUPS, (init_textenc, init_heads, init_denoiser)):
        for k, v in init(cfg, rng).items():
            params[f"{gname}.{k}"] = v
    return params


def group(params, name: str) -> "OrderedDict[str, Tensor]":
    pre = name + "."
    return OrderedDict((k[len(pre):], v) for k, v in params.items() if k.startswith(pre))


def group_checksum(params, name: str) -> str:
    import hashlib

    h = hashlib.sha256()
    for k, v in group(params, name).items():
        h.update(k.encode())
        h.update(v.data.tobytes())
    return h.hexdigest()


@dataclass
class TrainState:
    step: int
    params: "OrderedDict[str, Tensor]"
    adam: AdamState
    rng: np.random.Generator
    last_masks: object = field(default=None, repr=False)

    @classmethod
    def fresh(cls, cfg: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(cfg.seed)
        params = init_params(cfg.model, rng)
        return cls(0, params, AdamState.for_params(list(params.values())), rng)

    def param_list(self) -> list[Tensor]:
        return list(self.params.values())
