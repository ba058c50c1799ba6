"""Checkpoint format: a small header plus a tensor-blob section.

Layout (little-endian):

    magic  8 bytes   b"TAEMCKPT"
    u32              format version (currently 1)
    u32              config length
    bytes            canonical JSON config (sorted keys, no spaces)
    u64              master seed
    u64              optimizer step count
    bytes            tensor-blob stream with every parameter under
                     "param.<name>" and AdamW moments under
                     "adam.m.<name>" / "adam.v.<name>"

Round-trips are bit-exact; resuming against a different config is an error.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .blob import BlobFormatError, pack_blobs, unpack_blobs
from .network import ModelConfig, TaemParams, param_spec
from .optim import AdamW

MAGIC = b"TAEMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class Checkpoint:
    config: dict
    master_seed: int
    step: int
    blobs: dict[str, np.ndarray]


def save_checkpoint(
    path,
    params: TaemParams,
    optimizer: AdamW | None,
    master_seed: int,
    step: int,
    train_config: dict | None = None,
) -> None:
    config = {"model": params.config.to_dict(), "train": train_config or {}}
    blobs: dict[str, np.ndarray] = {
        f"param.{name}": t.data for name, t in params.tensors.items()
    }
    if optimizer is not None:
        for name in params.tensors:
            blobs[f"adam.m.{name}"] = optimizer.m[name]
            blobs[f"adam.v.{name}"] = optimizer.v[name]
    cfg_bytes = canonical_json(config).encode("utf-8")
    payload = b"".join(
        [
            MAGIC,
            struct.pack("<II", VERSION, len(cfg_bytes)),
            cfg_bytes,
            struct.pack("<QQ", master_seed, step),
            pack_blobs(blobs),
        ]
    )
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        payload = f.read()
    if payload[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint file")
    version, cfg_len = struct.unpack("<II", payload[8:16])
    if version > VERSION:
        raise CheckpointError(f"{path}: unsupported future checkpoint version {version}")
    pos = 16
    config = json.loads(payload[pos : pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    master_seed, step = struct.unpack("<QQ", payload[pos : pos + 16])
    pos += 16
    try:
        blobs = unpack_blobs(payload[pos:])
    except BlobFormatError as e:
        raise CheckpointError(f"{path}: corrupt blob section: {e}") from e
    return Checkpoint(config=config, master_seed=master_seed, step=step, blobs=blobs)


def restore_params(ckpt: Checkpoint) -> TaemParams:
    cfg = ModelConfig(**ckpt.config["model"])
    params = TaemParams(config=cfg)
    for name, shape, _ in param_spec(cfg):
        key = f"param.{name}"
        if key not in ckpt.blobs:
            raise CheckpointError(f"checkpoint is missing tensor {key!r}")
        arr = ckpt.blobs[key]
        if arr.shape != shape:
            raise CheckpointError(
                f"tensor {key!r} has shape {arr.shape}, config implies {shape}"
            )
        params.tensors[name] = Tensor(arr.copy(), requires_grad=True)
    return params


def restore_optimizer(ckpt: Checkpoint, params: TaemParams, **adamw_kwargs) -> AdamW:
    opt = AdamW(params.tensors, **adamw_kwargs)
    opt.step_count = ckpt.step
    for name in params.tensors:
        mk, vk = f"adam.m.{name}", f"adam.v.{name}"
        if mk not in ckpt.blobs or vk not in ckpt.blobs:
            raise CheckpointError(f"checkpoint has no optimizer state for {name!r}")
        opt.m[name] = ckpt.blobs[mk].copy()
        opt.v[name] = ckpt.blobs[vk].copy()
    return opt


def check_resume_config(ckpt: Checkpoint, config: dict) -> None:
    if canonical_json(ckpt.config) != canonical_json(config):
        raise CheckpointError(
            "checkpoint config does not match the requested config; "
            "refusing to resume"
        )
