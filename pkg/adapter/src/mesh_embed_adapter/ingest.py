"""Readers for the toolkit's line-delimited ingest formats."""

from __future__ import annotations


def read_thesaurus_inputs(path: str) -> list[tuple[str, str]]:
    """`id<TAB>label<TAB>description<TAB>tns` -> (id, "label : description")."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise ValueError(f"{path}:{line_no}: expected 4 tab-separated fields")
            rec_id, label, description, _ = fields
            out.append((rec_id, f"{label} : {description}"))
    return out


def read_corpus_inputs(path: str) -> list[tuple[str, str]]:
    """`doc_id<TAB>abstract<TAB>labels` -> (doc_id, abstract)."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3:
                raise ValueError(f"{path}:{line_no}: expected 3 tab-separated fields")
            out.append((fields[0], fields[1]))
    return out


def read_pairs_inputs(path: str) -> list[tuple[str, str]]:
    """Generic `id<TAB>text` fallback."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t", 1)
            if len(fields) != 2:
                raise ValueError(f"{path}:{line_no}: expected id<TAB>text")
            out.append((fields[0], fields[1]))
    return out
