"""Pooled-representation exporter: pretrained contextual encoder -> EMB1."""

from .emb1 import POOLING_TAGS, write_emb1
from .extract import CheckpointUnavailable, EmptyInput, ExtractionSpec, extract
from .ingest import read_corpus_inputs, read_pairs_inputs, read_thesaurus_inputs

__version__ = "0.1.0"

__all__ = [
    "CheckpointUnavailable",
    "EmptyInput",
    "ExtractionSpec",
    "POOLING_TAGS",
    "extract",
    "read_corpus_inputs",
    "read_pairs_inputs",
    "read_thesaurus_inputs",
    "write_emb1",
]
