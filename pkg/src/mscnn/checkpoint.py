"""Binary checkpoint format.

Layout: magic "MSCK1", u32 version, u64 blob length, UTF-8 JSON blob
(model config, training progress, RNG states), then repeated tensor
records of (u16 name length, name bytes, u8 rank, u32 dims...,
little-endian float32 data).  Parameters are stored under "p/", batch
norm running statistics under "b/", optimizer momentum under "m/".
Serialization is fully deterministic, so save -> load -> save produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .model import Model, ModelConfig
from .trainer import TrainConfig, TrainState

MAGIC = b"MSCK1"
VERSION = 1


@dataclass
class CheckpointData:
    blob: dict
    tensors: dict[str, np.ndarray]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.blob["model"])

    @property
    def train_config(self) -> TrainConfig | None:
        tc = self.blob.get("train")
        return TrainConfig.from_dict(tc) if tc else None

    @property
    def train_state(self) -> TrainState:
        progress = self.blob.get("progress", {})
        velocity = {
            name[2:]: arr for name, arr in self.tensors.items() if name.startswith("m/")
        }
        return TrainState(
            global_step=progress.get("global_step", 0),
            epoch=progress.get("epoch", 0),
            velocity=velocity,
            dropout_rng=self.blob.get("rng", {}).get("dropout", {}),
        )


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode()
    data = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("B", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
    fh.write(data.tobytes())


def save_checkpoint(
    path,
    model: Model,
    *,
    train_config: TrainConfig | None = None,
    state: TrainState | None = None,
) -> None:
    blob = {
        "model": model.config.to_dict(),
        "seed": model.seed,
        "train": train_config.to_dict() if train_config else None,
        "progress": {
            "global_step": state.global_step if state else 0,
            "epoch": state.epoch if state else 0,
        },
        "rng": {"dropout": state.dropout_rng if state else model.dropout_rng_states()},
    }
    encoded = json.dumps(blob, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        for name, p in model.named_parameters():
            _write_record(fh, f"p/{name}", p)
        for name, b in model.named_buffers():
            _write_record(fh, f"b/{name}", b)
        if state:
            for name in sorted(state.velocity):
                _write_record(fh, f"m/{name}", state.velocity[name])


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as fh:
        if fh.read(5) != MAGIC:
            raise ConfigError(f"{path}: not a MSCK1 checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        blob = json.loads(fh.read(blob_len).decode())
        tensors: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(2)
            if not head:
                break
            (name_len,) = struct.unpack("<H", head)
            name = fh.read(name_len).decode()
            (rank,) = struct.unpack("B", fh.read(1))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(dims)) if dims else 1
            flat = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if flat.size != count:
                raise ConfigError(f"{path}: truncated tensor record {name!r}")
            tensors[name] = flat.reshape(dims).astype(np.float32)
    return CheckpointData(blob=blob, tensors=tensors)


def restore_model(ckpt: CheckpointData, dtype=np.float32) -> Model:
    """Rebuild the model a checkpoint describes and load its tensors."""
    model = Model(ckpt.model_config, seed=ckpt.blob.get("seed", 0), dtype=dtype)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, arr in ckpt.tensors.items():
        kind, _, key = name.partition("/")
        if kind == "p":
            if key not in params:
                raise ConfigError(f"checkpoint parameter {key!r} not in model")
            params[key][...] = arr.astype(dtype)
        elif kind == "b":
            if key not in buffers:
                raise ConfigError(f"checkpoint buffer {key!r} not in model")
            buffers[key][...] = arr.astype(dtype)
    model.set_dropout_rng_states(ckpt.blob.get("rng", {}).get("dropout", {}))
    return model
