"""EMB1 writer.

Wire format: magic "EMB1", u32 entry count, u32 dim, u8 pooling tag, then per
entry a u16 id byte length, UTF-8 id bytes, and dim float32 components; all
little-endian. The file is written to a sibling temp path and renamed into
place so readers never observe a partial file.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Sequence

import numpy as np

MAGIC = b"EMB1"

POOLING_TAGS = ("first-position", "mean", "max")


def write_emb1(
    entries: Sequence[tuple[str, np.ndarray]], dim: int, pooling: str, path: str
) -> None:
    if pooling not in POOLING_TAGS:
        raise ValueError(f"unknown pooling tag {pooling!r}")
    seen: set[str] = set()
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<IIB", len(entries), dim, POOLING_TAGS.index(pooling))
    for entry_id, vector in entries:
        if entry_id in seen:
            raise ValueError(f"duplicate entry id {entry_id!r}")
        seen.add(entry_id)
        vec = np.asarray(vector, dtype="<f4")
        if vec.shape != (dim,):
            raise ValueError(f"entry {entry_id!r}: expected shape ({dim},), got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"entry {entry_id!r} contains non-finite components")
        raw = entry_id.encode("utf-8")
        payload += struct.pack("<H", len(raw))
        payload += raw
        payload += vec.tobytes()
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(prefix=".emb1-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(payload))
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
