"""Versioned tensor container used by model and probe checkpoints.

Layout: magic "TCK1", u32 header length, UTF-8 JSON header, then the raw
tensor payload. The header carries a config echo, RNG state, the training
step counter, and a tensor directory (name, shape, byte offset); tensors are
row-major float32 little-endian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

MAGIC = b"TCK1"
VERSION = 1


class ContainerError(Exception):
    pass


@dataclass
class Checkpoint:
    config: dict[str, Any]
    tensors: dict[str, np.ndarray]
    rng_state: dict[str, Any] | None = None
    step: int = 0
    extra: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    directory = []
    payload = bytearray()
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name], dtype="<f4")
        if arr.ndim:  # ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.ascontiguousarray(arr)
        directory.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.tobytes(order="C"))
    header = {
        "version": VERSION,
        "config": ckpt.config,
        "rng_state": ckpt.rng_state,
        "step": ckpt.step,
        "extra": ckpt.extra,
        "tensors": directory,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(bytes(payload))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContainerError(f"bad magic in {path!r}")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    if header.get("version") != VERSION:
        raise ContainerError(f"unsupported container version {header.get('version')}")
    base = 8 + hlen
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        if start + 4 * count > len(data):
            raise ContainerError(f"tensor {entry['name']!r} truncated")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(shape)
        tensors[entry["name"]] = arr.copy()
    return Checkpoint(
        config=header["config"],
        tensors=tensors,
        rng_state=header.get("rng_state"),
        step=int(header.get("step", 0)),
        extra=header.get("extra", {}),
    )
