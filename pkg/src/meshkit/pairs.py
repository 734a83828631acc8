"""Pair datasets for open-input classification.

Turns multi-label document annotations into ({term, document}, boolean)
pairs. The balanced configuration adds one frequency-weighted random negative
per positive; the siblings configuration (evaluation only) adds hierarchy
siblings as hard negatives and ancestors of annotated terms as positives.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import hierarchy as hi
from . import thesaurus as ts

CLS = "<cls>"
SEP = "<sep>"
COLON = ":"


class PairsError(Exception):
    pass


class EmptyTerm(PairsError):
    pass


class NotEnoughLabels(PairsError):
    pass


class CannotSampleNegative(PairsError):
    pass


class CorpusError(PairsError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    abstract: str
    labels: tuple[str, ...]  # sorted, deduplicated


@dataclass
class Corpus:
    docs: dict[str, Document] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs.values())

    def get(self, doc_id: str) -> Document:
        return self.docs[doc_id]

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for doc in self.docs.values():
            for label in doc.labels:
                counts[label] = counts.get(label, 0) + 1
        return counts


def load_corpus(lines: Iterable[str]) -> Corpus:
    """Parse line-delimited `doc_id<TAB>abstract<TAB>l1;l2;...` records."""
    corpus = Corpus()
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\n").split("\t")
        if len(fields) != 3:
            raise CorpusError(f"line {line_no}: expected 3 tab-separated fields, got {len(fields)}")
        doc_id, abstract, label_field = fields
        if not doc_id:
            raise CorpusError(f"line {line_no}: empty doc id")
        if doc_id in corpus.docs:
            raise CorpusError(f"line {line_no}: duplicate doc id {doc_id!r}")
        labels = tuple(sorted({l for l in label_field.split(";") if l}))
        if not labels:
            raise CorpusError(f"line {line_no}: document {doc_id!r} has no labels")
        corpus.docs[doc_id] = Document(doc_id, abstract, labels)
    return corpus


def load_corpus_file(path: str) -> Corpus:
    with open(path, "r", encoding="utf-8") as fh:
        return load_corpus(fh)


_WORD = re.compile(r"[a-z0-9]+")


def tokenize_text(text: str) -> list[str]:
    """Lowercased alphanumeric word tokens."""
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class AssembledInput:
    tokens: tuple[str, ...]
    desc_mask: tuple[bool, ...]  # True exactly on description tokens

    def __len__(self) -> int:
        return len(self.tokens)


def assemble_input(term: str, description: str, abstract: str, budget: int) -> AssembledInput:
    """Build `<cls> term : description <sep> abstract`, truncated from the tail.

    Positions covered by the description are flagged so the decoder can
    restrict its attention to them.
    """
    if budget < 8:
        raise ValueError(f"budget must be >= 8, got {budget}")
    term_tokens = tokenize_text(term)
    if not term_tokens:
        raise EmptyTerm(f"term {term!r} has no tokens")
    desc_tokens = tokenize_text(description)
    abstract_tokens = tokenize_text(abstract)
    tokens = [CLS, *term_tokens, COLON, *desc_tokens, SEP, *abstract_tokens]
    mask = [False] * (2 + len(term_tokens)) + [True] * len(desc_tokens) + [False] * (
        1 + len(abstract_tokens)
    )
    return AssembledInput(tuple(tokens[:budget]), tuple(mask[:budget]))


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    holdout_terms: frozenset[str]
    train_docs: frozenset[str]
    val_docs: frozenset[str]
    test_docs: frozenset[str]

    def partition_of(self, doc_id: str) -> str:
        if doc_id in self.train_docs:
            return "train"
        if doc_id in self.val_docs:
            return "val"
        return "test"


def _doc_rng(seed: int, doc_id: str) -> np.random.Generator:
    # stable per-document stream so parallel generation stays order-independent
    digest = hashlib.sha256(doc_id.encode("utf-8")).digest()
    return np.random.default_rng(seed ^ int.from_bytes(digest[:8], "little"))


def split_zero_shot(
    corpus: Corpus, n_holdout: int, seed: int, th: ts.Thesaurus | None = None
) -> SplitSpec:
    """Deterministic zero-shot split: held-out descriptors plus a 70/10/20
    document partition.

    When a thesaurus is given, holdout selection is stratified by top-level
    branch; otherwise it is uniform over corpus labels.
    """
    labels = sorted({l for doc in corpus for l in doc.labels})
    if n_holdout >= len(labels):
        raise NotEnoughLabels(f"cannot hold out {n_holdout} of {len(labels)} labels")
    rng = np.random.default_rng(seed)
    holdout: list[str] = []
    if n_holdout > 0:
        if th is not None:
            holdout = _stratified_holdout(labels, n_holdout, rng, th)
        else:
            holdout = list(rng.choice(np.array(labels, dtype=object), size=n_holdout, replace=False))
    doc_ids = sorted(corpus.docs)
    order = rng.permutation(len(doc_ids))
    n_train = int(0.7 * len(doc_ids))
    n_val = int(0.1 * len(doc_ids))
    shuffled = [doc_ids[i] for i in order]
    return SplitSpec(
        seed=seed,
        holdout_terms=frozenset(holdout),
        train_docs=frozenset(shuffled[:n_train]),
        val_docs=frozenset(shuffled[n_train : n_train + n_val]),
        test_docs=frozenset(shuffled[n_train + n_val :]),
    )


def _stratified_holdout(
    labels: list[str], n_holdout: int, rng: np.random.Generator, th: ts.Thesaurus
) -> list[str]:
    by_branch: dict[str, list[str]] = {}
    for label in labels:
        if label in th:
            branch = min(th.get(label).letters)
        else:
            branch = "?"
        by_branch.setdefault(branch, []).append(label)
    branches = sorted(by_branch)
    total = len(labels)
    # largest-remainder apportionment of the holdout budget across branches
    quotas = {b: n_holdout * len(by_branch[b]) / total for b in branches}
    counts = {b: min(int(quotas[b]), len(by_branch[b])) for b in branches}
    remainder = n_holdout - sum(counts.values())
    by_frac = sorted(branches, key=lambda b: (-(quotas[b] - int(quotas[b])), b))
    while remainder > 0:
        progressed = False
        for b in by_frac:
            if remainder == 0:
                break
            if counts[b] < len(by_branch[b]):
                counts[b] += 1
                remainder -= 1
                progressed = True
        if not progressed:
            break
    holdout: list[str] = []
    for b in branches:
        pool = by_branch[b]
        take = counts[b]
        if take:
            holdout.extend(rng.choice(np.array(pool, dtype=object), size=take, replace=False))
    return sorted(holdout)


ORIGIN_ANNOTATED = "annotated"
ORIGIN_SAMPLED_NEGATIVE = "sampled-negative"
ORIGIN_ANCESTOR_POSITIVE = "ancestor-positive"
ORIGIN_SIBLING_NEGATIVE = "sibling-negative"

_POSITIVE_ORIGINS = {ORIGIN_ANNOTATED, ORIGIN_ANCESTOR_POSITIVE}


@dataclass(frozen=True)
class Pair:
    descriptor: str
    doc_id: str
    positive: bool
    origin: str

    def __post_init__(self) -> None:
        if self.positive != (self.origin in _POSITIVE_ORIGINS):
            raise ValueError(f"origin {self.origin!r} inconsistent with polarity")


@dataclass
class PairSet:
    configuration: str  # balanced | siblings
    pairs: list[Pair]
    provenance: SplitSpec
    skipped: list[str] = field(default_factory=list)  # siblings-only: labels outside the graph

    def for_partition(self, partition: str) -> list[Pair]:
        docs = {
            "train": self.provenance.train_docs,
            "val": self.provenance.val_docs,
            "test": self.provenance.test_docs,
        }[partition]
        return [p for p in self.pairs if p.doc_id in docs]


def _effective_labels(doc: Document, split: SplitSpec) -> tuple[str, ...]:
    # held-out terms never appear as train/val pair labels; test keeps them
    if doc.doc_id in split.test_docs:
        return doc.labels
    return tuple(l for l in doc.labels if l not in split.holdout_terms)


def gen_balanced(corpus: Corpus, split: SplitSpec, seed: int) -> PairSet:
    """One frequency-weighted negative per positive, exactly, per document."""
    counts = corpus.label_counts()
    all_labels = np.array(sorted(counts), dtype=object)
    freqs = np.array([counts[l] for l in all_labels], dtype=np.float64)
    label_pos = {l: i for i, l in enumerate(all_labels)}
    pairs: list[Pair] = []
    for doc_id in sorted(corpus.docs):
        doc = corpus.get(doc_id)
        positives = _effective_labels(doc, split)
        if not positives:
            continue
        rng = _doc_rng(seed, doc_id)
        exclude = set(doc.labels)
        if doc_id not in split.test_docs:
            exclude |= split.holdout_terms
        weights = freqs.copy()
        for label in exclude:
            if label in label_pos:
                weights[label_pos[label]] = 0.0
        total = weights.sum()
        if total <= 0.0:
            raise CannotSampleNegative(
                f"document {doc_id!r} leaves no negative candidates"
            )
        probs = weights / total
        for label in positives:
            pairs.append(Pair(label, doc_id, True, ORIGIN_ANNOTATED))
            negative = rng.choice(all_labels, p=probs)
            pairs.append(Pair(str(negative), doc_id, False, ORIGIN_SAMPLED_NEGATIVE))
    return PairSet("balanced", pairs, split)


def gen_siblings(
    corpus: Corpus, split: SplitSpec, th: ts.Thesaurus, g: hi.HierarchyGraph
) -> PairSet:
    """Evaluation pairs with sibling hard negatives and ancestor positives.

    Labels missing from the filtered branches are skipped and reported.
    Conflicts resolve in favour of positives.
    """
    pairs: list[Pair] = []
    skipped: list[str] = []
    for doc_id in sorted(corpus.docs):
        doc = corpus.get(doc_id)
        annotated = [l for l in _effective_labels(doc, split) if l in th]
        in_graph: list[str] = []
        for label in annotated:
            try:
                g.descriptor_nodes(th, label)
            except hi.DescriptorNotInGraph:
                skipped.append(f"{label}\t{doc_id}")
                continue
            in_graph.append(label)
        if not in_graph:
            continue
        ancestor_pos: set[str] = set()
        for label in in_graph:
            ancestor_pos |= hi.ancestors(th, g, label)
        ancestor_pos -= set(in_graph)
        positives = set(in_graph) | ancestor_pos
        sibling_neg: set[str] = set()
        for label in in_graph:
            sibling_neg |= hi.siblings(th, g, label)
        sibling_neg -= positives
        for label in sorted(in_graph):
            pairs.append(Pair(label, doc_id, True, ORIGIN_ANNOTATED))
        for label in sorted(ancestor_pos):
            pairs.append(Pair(label, doc_id, True, ORIGIN_ANCESTOR_POSITIVE))
        for label in sorted(sibling_neg):
            pairs.append(Pair(label, doc_id, False, ORIGIN_SIBLING_NEGATIVE))
    return PairSet("siblings", pairs, split, skipped)


def decoder_targets(th: ts.Thesaurus, descriptor_id: str) -> list[list[int]]:
    """One BOS..EOS token-id sequence per tree number of the descriptor."""
    desc = th.get(descriptor_id)
    targets: list[list[int]] = []
    for tn in sorted(desc.tree_numbers):
        ids = [ts.BOS_ID]
        for i, token in enumerate(ts.tokenize_tree_number(tn)):
            if i >= 2:
                ids.append(ts.DOT_ID)
            ids.append(ts.vocab_index(token))
        ids.append(ts.EOS_ID)
        targets.append(ids)
    return targets


def write_pairs(pairset: PairSet, path: str) -> None:
    """Line-delimited `descriptor<TAB>doc<TAB>{0|1}<TAB>origin`."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairset.pairs:
            fh.write(f"{p.descriptor}\t{p.doc_id}\t{int(p.positive)}\t{p.origin}\n")


def read_pairs(path: str, configuration: str, split: SplitSpec) -> PairSet:
    pairs: list[Pair] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise PairsError(f"line {line_no}: expected 4 fields")
            descriptor, doc_id, flag, origin = fields
            pairs.append(Pair(descriptor, doc_id, flag == "1", origin))
    return PairSet(configuration, pairs, split)
