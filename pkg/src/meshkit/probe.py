"""Structural probes over label embeddings.

A probe is a linear map B whose induced squared form d_B(h_i, h_j) =
(B(h_i - h_j))^T (B(h_i - h_j)) is trained to reconstruct a gold hierarchy
signal: either the shortest-path length between two descriptors, or whether
they share at least k ancestors (a sigmoid centred on a positive constant,
since d_B is never negative).

The shortest-path loss has two conventions. The default ("squared") squares
the already quadratic form before comparing against the gold length; the
"direct" mode compares d_B itself, which is where exact recovery of a planted
tree metric is well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container as ct
from .embed_io import DimensionMismatch, EmbeddingTable
from .hierarchy import DescriptorNotInGraph, DistanceOracle, HierarchyGraph, descriptor_distance
from .hierarchy import common_ancestor_count as ca_count
from .thesaurus import Thesaurus

LOSS_MODES = ("squared", "direct")


class ProbeError(Exception):
    pass


class MissingEmbedding(ProbeError):
    pass


class DivergedLoss(ProbeError):
    pass


@dataclass
class ProbeParams:
    b: np.ndarray  # (k, m)
    center: float = 1.0  # binary probes: positive sigmoid centre

    @property
    def rank(self) -> int:
        return self.b.shape[0]

    @property
    def width(self) -> int:
        return self.b.shape[1]


def init_probe(rank: int, width: int, seed: int, scale: float = 0.05) -> ProbeParams:
    rng = np.random.default_rng(seed)
    return ProbeParams(b=rng.normal(0.0, scale, size=(rank, width)))


def probe_distance(p: ProbeParams, h_i: np.ndarray, h_j: np.ndarray) -> float:
    """d_B: squared norm of B applied to the difference vector."""
    h_i = np.asarray(h_i, dtype=np.float64)
    h_j = np.asarray(h_j, dtype=np.float64)
    if h_i.shape != (p.width,) or h_j.shape != (p.width,):
        raise DimensionMismatch(f"expected vectors of width {p.width}")
    v = p.b @ (h_i - h_j)
    return float(v @ v)


def _distances(p: ProbeParams, deltas: np.ndarray) -> np.ndarray:
    proj = deltas @ p.b.T  # (n, k)
    return np.einsum("ij,ij->i", proj, proj)


def shortest_path_loss(p: ProbeParams, h_i: np.ndarray, h_j: np.ndarray, gold: float, mode: str = "squared") -> float:
    """|gold - d_B^2| in squared mode, |gold - d_B| in direct mode."""
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    d = probe_distance(p, h_i, h_j)
    pred = d * d if mode == "squared" else d
    return abs(gold - pred)


def common_ancestor_prob(p: ProbeParams, h_i: np.ndarray, h_j: np.ndarray) -> float:
    """Probability that the two descriptors share at least k ancestors."""
    d = probe_distance(p, h_i, h_j)
    z = np.clip(p.center - d, -500.0, 500.0)
    return float(1.0 / (1.0 + np.exp(-z)))


@dataclass(frozen=True)
class ProbePair:
    i: str
    j: str
    gold: float


@dataclass
class ProbeDataset:
    task: str  # shortest-path | common-ancestors
    k: int | None  # common-ancestors threshold
    train: list[ProbePair]
    val: list[ProbePair]
    eval: list[ProbePair]
    embeddings: EmbeddingTable
    train_descriptors: tuple[str, ...]
    heldout_descriptors: tuple[str, ...]

    def deltas(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        pairs = getattr(self, split)
        if not pairs:
            dim = self.embeddings.dim
            return np.zeros((0, dim)), np.zeros(0)
        deltas = np.stack(
            [
                self.embeddings.get(p.i).astype(np.float64)
                - self.embeddings.get(p.j).astype(np.float64)
                for p in pairs
            ]
        )
        gold = np.array([p.gold for p in pairs], dtype=np.float64)
        return deltas, gold


def build_probe_dataset(
    th: Thesaurus,
    g: HierarchyGraph,
    oracle: DistanceOracle,
    embeddings: EmbeddingTable,
    task: str = "shortest-path",
    k: int = 1,
    sample_fraction: float = 0.1,
    seed: int = 0,
    heldout_fraction: float = 0.3,
) -> ProbeDataset:
    """Descriptor-level split, then within-split pair sampling.

    Eval pairs have both endpoints held out; the held-out pair pool is split
    evenly between validation and evaluation. Cross-branch pairs with
    infinite shortest-path gold are dropped rather than clamped.
    """
    if task not in ("shortest-path", "common-ancestors"):
        raise ValueError(f"unknown probe task {task!r}")
    candidates = []
    for desc_id in th.ids():
        try:
            g.descriptor_nodes(th, desc_id)
        except DescriptorNotInGraph:
            continue
        candidates.append(desc_id)
    missing = [d for d in candidates if d not in embeddings]
    if missing:
        raise MissingEmbedding(f"descriptors without embeddings: {', '.join(missing[:10])}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(candidates))
    n_held = int(round(heldout_fraction * len(candidates)))
    heldout = tuple(sorted(candidates[i] for i in order[:n_held]))
    train_ids = tuple(sorted(candidates[i] for i in order[n_held:]))

    def gold_value(a: str, b: str) -> float | None:
        if task == "shortest-path":
            d = descriptor_distance(g, oracle, th, a, b)
            return None if not np.isfinite(d) else float(d)
        return float(ca_count(th, a, b) >= k)

    def sample_pairs(ids: tuple[str, ...]) -> list[ProbePair]:
        out = []
        for a_idx in range(len(ids)):
            for b_idx in range(a_idx + 1, len(ids)):
                if sample_fraction < 1.0 and rng.random() >= sample_fraction:
                    continue
                gold = gold_value(ids[a_idx], ids[b_idx])
                if gold is None:
                    continue
                out.append(ProbePair(ids[a_idx], ids[b_idx], gold))
        return out

    train_pairs = sample_pairs(train_ids)
    held_pairs = sample_pairs(heldout)
    half = rng.permutation(len(held_pairs))
    val_pairs = [held_pairs[i] for i in sorted(half[: len(held_pairs) // 2])]
    eval_pairs = [held_pairs[i] for i in sorted(half[len(held_pairs) // 2 :])]
    return ProbeDataset(task, k if task == "common-ancestors" else None, train_pairs, val_pairs, eval_pairs, embeddings, train_ids, heldout)


@dataclass(frozen=True)
class ProbeTrainConfig:
    lr: float = 2.5e-5
    epochs: int = 200
    batch_size: int = 0  # 0 = full batch
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    mode: str = "squared"  # shortest-path loss convention
    cosine_decay: bool = True
    patience: int = 0  # early stop after this many non-improving epochs; 0 = off
    seed: int = 0


@dataclass
class ProbeMetrics:
    task: str
    mode: str
    k: int | None
    error: float | None = None  # shortest-path: mean |gold - pred|
    gold_mean: float | None = None
    gold_std: float | None = None
    f1: float | None = None
    precision: float | None = None
    recall: float | None = None
    n_pairs: int = 0
    curves: dict[str, list[float]] = field(default_factory=dict)


def _sp_loss_and_grad(p: ProbeParams, deltas: np.ndarray, gold: np.ndarray, mode: str) -> tuple[float, np.ndarray]:
    proj = deltas @ p.b.T  # (n, k)
    d = np.einsum("ij,ij->i", proj, proj)
    pred = d * d if mode == "squared" else d
    resid = pred - gold
    loss = float(np.abs(resid).mean())
    sign = np.sign(resid)
    # d pred/d d_B is 1 (direct) or 2 d_B (squared); dd_B/dB = 2 B delta delta^T
    coef = sign * (2.0 * d if mode == "squared" else 1.0)
    grad = 2.0 * (proj * coef[:, None]).T @ deltas / len(gold)
    return loss, grad


def _ca_loss_and_grad(p: ProbeParams, deltas: np.ndarray, gold: np.ndarray) -> tuple[float, np.ndarray, float]:
    proj = deltas @ p.b.T
    d = np.einsum("ij,ij->i", proj, proj)
    z = p.center - d
    # stable BCE on sigmoid(z)
    loss = float((np.logaddexp(0.0, z) - gold * z).mean())
    prob = 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))
    dz = (prob - gold) / len(gold)
    d_center = float(dz.sum())
    dd = -dz
    grad = 2.0 * (proj * dd[:, None]).T @ deltas
    return loss, grad, d_center


def train_probe(ds: ProbeDataset, rank: int, config: ProbeTrainConfig) -> tuple[ProbeParams, ProbeMetrics]:
    """Adam with decoupled weight decay on the probe map (and the sigmoid
    centre for binary tasks); returns per-epoch train/val loss curves."""
    train_deltas, train_gold = ds.deltas("train")
    val_deltas, val_gold = ds.deltas("val")
    if len(train_gold) == 0:
        raise ProbeError("empty probe training split")
    p = init_probe(rank, ds.embeddings.dim, config.seed)
    if ds.task == "common-ancestors":
        d0 = _distances(p, train_deltas)
        p.center = float(d0.mean()) if len(d0) else 1.0
    rng = np.random.default_rng(config.seed)
    m_b = np.zeros_like(p.b)
    v_b = np.zeros_like(p.b)
    m_c = 0.0
    v_c = 0.0
    t = 0
    curves: dict[str, list[float]] = {"train": [], "val": []}
    best_val = float("inf")
    best_b = p.b.copy()
    best_center = p.center
    stale = 0

    def eval_loss(deltas: np.ndarray, gold: np.ndarray) -> float:
        if len(gold) == 0:
            return float("nan")
        if ds.task == "shortest-path":
            return _sp_loss_and_grad(p, deltas, gold, config.mode)[0]
        return _ca_loss_and_grad(p, deltas, gold)[0]

    n = len(train_gold)
    batch = n if config.batch_size in (0, None) else min(config.batch_size, n)
    for epoch in range(config.epochs):
        lr = config.lr
        if config.cosine_decay:
            lr *= 0.5 * (1.0 + np.cos(np.pi * epoch / config.epochs))
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            if ds.task == "shortest-path":
                loss, grad_b = _sp_loss_and_grad(p, train_deltas[idx], train_gold[idx], config.mode)
                grad_c = 0.0
            else:
                loss, grad_b, grad_c = _ca_loss_and_grad(p, train_deltas[idx], train_gold[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"probe loss diverged at epoch {epoch}")
            t += 1
            bc1 = 1.0 - config.betas[0] ** t
            bc2 = 1.0 - config.betas[1] ** t
            m_b = config.betas[0] * m_b + (1.0 - config.betas[0]) * grad_b
            v_b = config.betas[1] * v_b + (1.0 - config.betas[1]) * grad_b * grad_b
            if config.weight_decay:
                p.b -= lr * config.weight_decay * p.b
            p.b -= lr * (m_b / bc1) / (np.sqrt(v_b / bc2) + config.adam_eps)
            if ds.task == "common-ancestors":
                m_c = config.betas[0] * m_c + (1.0 - config.betas[0]) * grad_c
                v_c = config.betas[1] * v_c + (1.0 - config.betas[1]) * grad_c * grad_c
                p.center -= lr * (m_c / bc1) / (np.sqrt(v_c / bc2) + config.adam_eps)
            epoch_loss += loss
            n_batches += 1
        curves["train"].append(epoch_loss / n_batches)
        val_loss = eval_loss(val_deltas, val_gold)
        curves["val"].append(val_loss)
        score = val_loss if np.isfinite(val_loss) else curves["train"][-1]
        if score < best_val - 1e-12:
            best_val = score
            best_b = p.b.copy()
            best_center = p.center
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                break
    p.b = best_b
    p.center = best_center
    metrics = eval_probe(p, ds, mode=config.mode, split="eval")
    metrics.curves = curves
    return p, metrics


def eval_probe(p: ProbeParams, ds: ProbeDataset, mode: str = "squared", split: str = "eval") -> ProbeMetrics:
    """Shortest-path: mean absolute distance error plus the gold statistics.
    Common-ancestors: precision/recall/F1 at probability 0.5."""
    deltas, gold = ds.deltas(split)
    if ds.task == "shortest-path":
        proj = deltas @ p.b.T
        d = np.einsum("ij,ij->i", proj, proj)
        pred = d * d if mode == "squared" else d
        err = float(np.abs(gold - pred).mean()) if len(gold) else float("nan")
        return ProbeMetrics(
            task=ds.task,
            mode=mode,
            k=None,
            error=err,
            gold_mean=float(gold.mean()) if len(gold) else None,
            gold_std=float(gold.std()) if len(gold) else None,
            n_pairs=len(gold),
        )
    proj = deltas @ p.b.T
    d = np.einsum("ij,ij->i", proj, proj)
    prob = 1.0 / (1.0 + np.exp(-np.clip(p.center - d, -500, 500)))
    pred = prob >= 0.5
    tp = int(np.sum(pred & (gold == 1.0)))
    fp = int(np.sum(pred & (gold == 0.0)))
    fn = int(np.sum(~pred & (gold == 1.0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ProbeMetrics(
        task=ds.task,
        mode=mode,
        k=ds.k,
        f1=f1,
        precision=precision,
        recall=recall,
        n_pairs=len(gold),
    )


def save_probe(p: ProbeParams, metrics: ProbeMetrics, path: str) -> None:
    ct.save_checkpoint(
        ct.Checkpoint(
            config={"task": metrics.task, "mode": metrics.mode, "k": metrics.k, "rank": p.rank, "width": p.width},
            tensors={"b": p.b.astype(np.float32), "center": np.float64(p.center)},
        ),
        path,
    )


def load_probe(path: str) -> tuple[ProbeParams, dict]:
    ckpt = ct.load_checkpoint(path)
    p = ProbeParams(b=ckpt.tensors["b"].astype(np.float64), center=float(ckpt.tensors["center"]))
    return p, ckpt.config
