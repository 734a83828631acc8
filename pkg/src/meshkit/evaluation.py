"""Classification metrics, frequency/depth breakdowns, and zero-shot baselines.

The headline numbers are micro-averaged over pairs (the task is binary per
pair); macro-over-labels variants are reported alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import hierarchy as hi
from .embed_io import cosine
from .thesaurus import Thesaurus

PairKey = tuple[str, str]  # (descriptor, doc_id)


class EvaluationError(Exception):
    pass


class EmptyEvaluation(EvaluationError):
    pass


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, predicted: bool, gold: bool) -> None:
        if predicted and gold:
            self.tp += 1
        elif predicted:
            self.fp += 1
        elif gold:
            self.fn += 1
        else:
            self.tn += 1

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def prf(self) -> tuple[float, float, float]:
        precision = self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0
        recall = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return precision, recall, f1


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    support: int
    confusion: Confusion
    configuration: str = ""
    macro_precision: float | None = None
    macro_recall: float | None = None
    macro_f1: float | None = None

    def as_dict(self) -> dict:
        return {
            "configuration": self.configuration,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "support": self.support,
            "confusion": vars(self.confusion),
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def prf(
    predictions: dict[PairKey, float],
    gold: dict[PairKey, bool],
    threshold: float = 0.5,
    configuration: str = "",
) -> MetricsReport:
    """Micro precision/recall/F1 over pairs, with macro-over-labels extras."""
    if not gold:
        raise EmptyEvaluation("no pairs to evaluate")
    missing = set(gold) - set(predictions)
    if missing:
        raise EvaluationError(f"{len(missing)} gold pairs have no prediction")
    confusion = Confusion()
    per_label: dict[str, Confusion] = {}
    for key, is_positive in gold.items():
        predicted = predictions[key] >= threshold
        confusion.add(predicted, is_positive)
        per_label.setdefault(key[0], Confusion()).add(predicted, is_positive)
    precision, recall, f1 = confusion.prf()
    label_scores = [c.prf() for c in per_label.values()]
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=confusion.total,
        confusion=confusion,
        configuration=configuration,
        macro_precision=float(np.mean([s[0] for s in label_scores])),
        macro_recall=float(np.mean([s[1] for s in label_scores])),
        macro_f1=float(np.mean([s[2] for s in label_scores])),
    )


@dataclass
class Bin:
    label: str
    f1: float
    support: int
    confusion: Confusion


@dataclass
class BinnedReport:
    axis: str  # frequency | depth
    bins: list[Bin] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "axis": self.axis,
            "bins": [
                {"label": b.label, "f1": b.f1, "support": b.support, "confusion": vars(b.confusion)}
                for b in self.bins
            ],
        }

    def total_support(self) -> int:
        return sum(b.support for b in self.bins)

    def recombined(self) -> Confusion:
        out = Confusion()
        for b in self.bins:
            out.tp += b.confusion.tp
            out.fp += b.confusion.fp
            out.fn += b.confusion.fn
            out.tn += b.confusion.tn
        return out


FREQUENCY_BINS = ("0", "1", "(1,10]", "(10,100]", "(100,inf)")


def _frequency_bin(count: int) -> str:
    if count <= 0:
        return "0"
    if count == 1:
        return "1"
    if count <= 10:
        return "(1,10]"
    if count <= 100:
        return "(10,100]"
    return "(100,inf)"


def f1_by_frequency(
    predictions: dict[PairKey, float],
    gold: dict[PairKey, bool],
    train_counts: dict[str, int],
    threshold: float = 0.5,
) -> BinnedReport:
    """Per-bin F1 keyed by how often the label occurred in training (0 = zero-shot)."""
    confusions = {name: Confusion() for name in FREQUENCY_BINS}
    for key, is_positive in gold.items():
        b = _frequency_bin(train_counts.get(key[0], 0))
        confusions[b].add(predictions[key] >= threshold, is_positive)
    report = BinnedReport(axis="frequency")
    for name in FREQUENCY_BINS:
        c = confusions[name]
        report.bins.append(Bin(name, c.prf()[2], c.total, c))
    return report


def f1_by_depth(
    predictions: dict[PairKey, float],
    gold: dict[PairKey, bool],
    th: Thesaurus,
    threshold: float = 0.5,
) -> BinnedReport:
    """Per-bin F1 keyed by the integer-rounded average depth of the label."""
    confusions: dict[int, Confusion] = {}
    for key, is_positive in gold.items():
        depth_bin = round(hi.depth(th, key[0]))
        confusions.setdefault(depth_bin, Confusion()).add(predictions[key] >= threshold, is_positive)
    report = BinnedReport(axis="depth")
    for depth_bin in sorted(confusions):
        c = confusions[depth_bin]
        report.bins.append(Bin(str(depth_bin), c.prf()[2], c.total, c))
    return report


def baseline_isin(label: str, abstract: str) -> bool:
    """Case-folded substring lookup of the label in the abstract."""
    return label.lower() in abstract.lower()


def baseline_cos_sim(label_emb: np.ndarray, doc_emb: np.ndarray, threshold: float) -> bool:
    return cosine(label_emb, doc_emb) >= threshold


def select_cosine_threshold(
    scores: dict[PairKey, float], gold: dict[PairKey, bool], step: float = 0.01
) -> float:
    """Grid search over [0, 1]; returns the threshold maximising validation F1
    (lowest threshold wins ties)."""
    if not gold:
        raise EmptyEvaluation("no validation pairs for threshold selection")
    best_t, best_f1 = 0.0, -1.0
    for i in range(int(round(1.0 / step)) + 1):
        t = i * step
        confusion = Confusion()
        for key, is_positive in gold.items():
            confusion.add(scores[key] >= t, is_positive)
        f1 = confusion.prf()[2]
        if f1 > best_f1 + 1e-12:
            best_t, best_f1 = t, f1
    return best_t


def write_binned_csv(report: BinnedReport, path: str) -> None:
    """Plot-ready table: one row per bin."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin,f1,support,tp,fp,fn,tn\n")
        for b in report.bins:
            c = b.confusion
            fh.write(f"{b.label},{b.f1:.6f},{b.support},{c.tp},{c.fp},{c.fn},{c.tn}\n")


def isclose_f1(a: float, b: float, tol: float = 1e-9) -> bool:
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)
