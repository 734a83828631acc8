"""Batched pooled-representation extraction from a pretrained encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emb1 import POOLING_TAGS, write_emb1


class CheckpointUnavailable(Exception):
    pass


class EmptyInput(Exception):
    pass


@dataclass
class ExtractionSpec:
    checkpoint: str  # model hub identifier or local path
    pooling: str = "mean"
    inputs: list[tuple[str, str]] = field(default_factory=list)  # (id, text)
    max_length: int = 512
    batch_size: int = 8

    def __post_init__(self) -> None:
        if self.pooling not in POOLING_TAGS:
            raise ValueError(f"unknown pooling {self.pooling!r}; expected one of {POOLING_TAGS}")


def _load(checkpoint: str):
    import torch
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(checkpoint)
        model = AutoModel.from_pretrained(checkpoint)
    except Exception as exc:
        raise CheckpointUnavailable(f"cannot resolve encoder checkpoint {checkpoint!r}: {exc}") from exc
    model.eval()
    torch.set_num_threads(1)  # bitwise-stable reductions for repeat runs
    return tokenizer, model


def _pool(hidden, attention_mask, pooling: str):
    import torch

    if pooling == "first-position":
        return hidden[:, 0, :]
    mask = attention_mask.unsqueeze(-1).to(hidden.dtype)
    if pooling == "mean":
        total = (hidden * mask).sum(dim=1)
        counts = mask.sum(dim=1).clamp(min=1.0)
        return total / counts
    filled = hidden.masked_fill(mask == 0.0, float("-inf"))
    return filled.max(dim=1).values


def extract(spec: ExtractionSpec, out_path: str) -> int:
    """Encode every input text, pool, and write one EMB1 entry per id.

    Runs the encoder in evaluation mode, so repeated extraction of the same
    inputs is bitwise identical. Returns the number of entries written.
    """
    import torch

    if not spec.inputs:
        raise EmptyInput("extraction needs at least one (id, text) input")
    ids = [i for i, _ in spec.inputs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate input ids")
    tokenizer, model = _load(spec.checkpoint)
    entries: list[tuple[str, np.ndarray]] = []
    with torch.no_grad():
        for start in range(0, len(spec.inputs), spec.batch_size):
            chunk = spec.inputs[start : start + spec.batch_size]
            encoded = tokenizer(
                [text for _, text in chunk],
                truncation=True,
                max_length=spec.max_length,
                padding=True,
                return_tensors="pt",
            )
            output = model(**encoded)
            pooled = _pool(output.last_hidden_state, encoded["attention_mask"], spec.pooling)
            for (entry_id, _), vector in zip(chunk, pooled):
                entries.append((entry_id, vector.numpy().astype(np.float32)))
    dim = entries[0][1].shape[0]
    write_emb1(entries, dim, spec.pooling, out_path)
    return len(entries)
