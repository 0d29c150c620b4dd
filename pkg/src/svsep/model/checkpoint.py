"""Checkpoint files.

Byte layout::

    bytes 0-7     magic b"SVSEPCK1"
    bytes 8-15    header length H, unsigned 64-bit little-endian
    next H bytes  UTF-8 JSON header (sorted keys)
    remainder     little-endian float32 values

The header records the U-Net config, epoch, loss history and a ``tensors``
list of ``[name, shape]`` pairs. The float block holds every trainable
weight in flat-vector order, followed by the normalization running
statistics in the order listed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import InvalidInputError
from .unet import ModelParams, UNetConfig

MAGIC = b"SVSEPCK1"


def to_bytes(params: ModelParams, epoch: int = 0, history: dict | None = None, extra: dict | None = None) -> bytes:
    tensors = [[k, list(v.shape), "weight"] for k, v in params.weights.items()]
    tensors += [[k, list(v.shape), "stat"] for k, v in params.stats.items()]
    header = {"config": params.config.to_dict(), "epoch": int(epoch),
              "history": history or {}, "tensors": tensors, "extra": extra or {}}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = list(params.weights.values()) + list(params.stats.values())
    block = np.concatenate([a.ravel() for a in arrays]).astype("<f4").tobytes()
    return MAGIC + struct.pack("<Q", len(hb)) + hb + block


def from_bytes(data: bytes):
    """Return ``(params, header)``."""
    if data[:8] != MAGIC:
        raise InvalidInputError("not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n].decode("utf-8"))
    values = np.frombuffer(data[16 + n:], dtype="<f4").astype(np.float64)
    cfg = header["config"]
    cfg["input_shape"] = tuple(cfg["input_shape"])
    config = UNetConfig(**cfg)
    weights, stats, i = {}, {}, 0
    for name, shape, role in header["tensors"]:
        size = int(np.prod(shape)) if shape else 1
        arr = values[i:i + size].reshape(shape)
        i += size
        (weights if role == "weight" else stats)[name] = arr
    if i != len(values):
        raise InvalidInputError("checkpoint parameter block has the wrong size")
    return ModelParams(config, weights, stats), header


def save(path, params: ModelParams, epoch: int = 0, history: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(params, epoch, history, extra))
    return path


def load(path):
    return from_bytes(Path(path).read_bytes())
