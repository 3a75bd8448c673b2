"""Checkpoint save/load on top of the tensor container format."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import formats
from .config import TrainConfig, config_from_record, config_to_record
from .gradcore import AdamState, Tensor
from .model import TrainState, init_params


class CheckpointMismatch(ValueError):
    pass


def _rng_record(rng: np.random.Generator) -> "OrderedDict[str, object]":
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 generators can be checkpointed")
    return OrderedDict(
        kind="state",
        rng_state=st["state"]["state"],
        rng_inc=st["state"]["inc"],
        rng_has_uint32=st["has_uint32"],
        rng_uinteger=st["uinteger"],
    )


def save_checkpoint(path, state: TrainState, cfg: TrainConfig) -> None:
    rec = _rng_record(state.rng)
    rec["step"] = state.step
    rec["adam_step"] = state.adam.step
    rec["adam_beta1"] = state.adam.beta1
    rec["adam_beta2"] = state.adam.beta2
    rec["adam_eps"] = state.adam.eps
    meta = config_to_record(cfg) + "\n" + formats.format_record(rec)
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, p in state.params.items():
        tensors[f"param.{name}"] = p.data
    for name, m, v in zip(state.params, state.adam.m, state.adam.v):
        tensors[f"adam.m.{name}"] = m
        tensors[f"adam.v.{name}"] = v
    formats.write_tensor_file(path, meta, tensors)


def load_checkpoint(path, cfg: TrainConfig | None = None) -> tuple[TrainState, TrainConfig]:
    """Load a checkpoint; if ``cfg`` is given its model dims must match."""
    meta, tensors = formats.read_tensor_file(path)
    cfg_line, state_line = meta.split("\n")
    saved_cfg = config_from_record(cfg_line)
    if cfg is not None and cfg.model != saved_cfg.model:
        raise CheckpointMismatch(f"{path}: model config {saved_cfg.model} != expected {cfg.model}")
    use_cfg = cfg if cfg is not None else saved_cfg
    rec = formats.parse_record(state_line)

    template = init_params(use_cfg.model, np.random.default_rng(0))
    params: OrderedDict[str, Tensor] = OrderedDict()
    m, v = [], []
    for name, tp in template.items():
        key = f"param.{name}"
        if key not in tensors:
            raise CheckpointMismatch(f"{path}: missing tensor {key}")
        if tensors[key].shape != tp.shape:
            raise CheckpointMismatch(f"{path}: {key} has shape {tensors[key].shape}, expected {tp.shape}")
        params[name] = Tensor(tensors[key], requires_grad=True)
        m.append(tensors[f"adam.m.{name}"].copy())
        v.append(tensors[f"adam.v.{name}"].copy())
    if len(tensors) != 3 * len(template):
        raise CheckpointMismatch(f"{path}: unexpected extra tensors")

    adam = AdamState(
        m, v, step=int(rec["adam_step"]), beta1=float(rec["adam_beta1"]),
        beta2=float(rec["adam_beta2"]), eps=float(rec["adam_eps"]),
    )
    rng = np.random.default_rng()
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(rec["rng_state"]), "inc": int(rec["rng_inc"])},
        "has_uint32": int(rec["rng_has_uint32"]),
        "uinteger": int(rec["rng_uinteger"]),
    }
    return TrainState(int(rec["step"]), params, adam, rng), saved_cfg
