"""Bit-exact embedding table exchange (EMB1 format).

Layout: magic "EMB1", u32 entry count, u32 dim, u8 pooling tag, then per
entry a u16 id byte length, the UTF-8 id bytes, and dim float32 components.
All integers and floats little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

MAGIC = b"EMB1"

POOLING_TAGS = ("first-position", "mean", "max")


class EmbeddingIOError(Exception):
    pass


class BadMagic(EmbeddingIOError):
    pass


class TruncatedFile(EmbeddingIOError):
    pass


class NonFiniteValue(EmbeddingIOError):
    pass


class DuplicateId(EmbeddingIOError):
    pass


class ZeroVector(EmbeddingIOError):
    pass


class DimensionMismatch(EmbeddingIOError):
    pass


@dataclass
class EmbeddingTable:
    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    pooling: str = "first-position"
    producer: str = ""  # in-memory metadata only, not part of the wire format

    def __post_init__(self) -> None:
        if self.pooling not in POOLING_TAGS:
            raise ValueError(f"unknown pooling tag {self.pooling!r}")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def get(self, key: str) -> np.ndarray:
        return self.entries[key]

    def add(self, key: str, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise DimensionMismatch(f"entry {key!r}: expected shape ({self.dim},), got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise NonFiniteValue(f"entry {key!r} contains non-finite components")
        if key in self.entries:
            raise DuplicateId(f"entry id {key!r} already present")
        self.entries[key] = vec


def write_emb(table: EmbeddingTable, sink: BinaryIO | str) -> None:
    if isinstance(sink, str):
        with open(sink, "wb") as fh:
            write_emb(table, fh)
        return
    sink.write(MAGIC)
    sink.write(struct.pack("<IIB", len(table.entries), table.dim, POOLING_TAGS.index(table.pooling)))
    for key, vec in table.entries.items():
        raw = key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise EmbeddingIOError(f"entry id too long ({len(raw)} bytes)")
        sink.write(struct.pack("<H", len(raw)))
        sink.write(raw)
        sink.write(vec.astype("<f4").tobytes())


def read_emb(source: BinaryIO | str) -> EmbeddingTable:
    if isinstance(source, str):
        with open(source, "rb") as fh:
            return read_emb(fh)
    data = source.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not an EMB1 file")
    if len(data) < 13:
        raise TruncatedFile("header cut short")
    count, dim, pooling_tag = struct.unpack_from("<IIB", data, 4)
    if pooling_tag >= len(POOLING_TAGS):
        raise EmbeddingIOError(f"unknown pooling tag byte {pooling_tag}")
    table = EmbeddingTable(dim=dim, pooling=POOLING_TAGS[pooling_tag])
    offset = 13
    for _ in range(count):
        if offset + 2 > len(data):
            raise TruncatedFile("entry header cut short")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + 4 * dim > len(data):
            raise TruncatedFile("entry payload cut short")
        key = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += 4 * dim
        if not np.all(np.isfinite(vec)):
            raise NonFiniteValue(f"entry {key!r} contains non-finite components")
        if key in table.entries:
            raise DuplicateId(f"entry id {key!r} duplicated in file")
        table.entries[key] = vec
    if offset != len(data):
        raise TruncatedFile(f"{len(data) - offset} trailing bytes")
    return table


def write_emb_text(table: EmbeddingTable, path: str) -> None:
    """Debug-only text export; the binary format is the interchange contract."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# dim={table.dim} pooling={table.pooling}\n")
        for key, vec in table.entries.items():
            fh.write(key + "\t" + " ".join(repr(float(x)) for x in vec) + "\n")


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"shape {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine undefined for zero vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
