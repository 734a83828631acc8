"""Training loop for the toy matching model.

Two parameter groups get their own optimizer: the main group (encoder,
classification head, loss scales) uses Adam with decoupled weight decay, the
decoder group (tree-vocabulary embedding, GRU, output projection) uses plain
Adam with a higher learning rate. Checkpoints are taken every quarter epoch
and the best one by validation loss wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .. import container as ct
from .. import thesaurus as ts
from ..embed_io import EmbeddingTable
from ..pairs import CLS, COLON, SEP, Corpus, Pair, PairSet, assemble_input, decoder_targets
from .network import (
    DECODER_GROUP,
    MAIN_GROUP,
    EncoderConfig,
    Network,
    Sample,
    batch_loss,
    prepare_sample,
)
from .textvocab import TextVocab, build_text_vocab


class DivergedLoss(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "mtl"  # stl | mtl
    epochs: float = 4.0
    batch_size: int = 16
    lr_main: float = 2e-5
    lr_decoder: float = 5e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    checkpoint_every: float = 0.25  # in epochs
    teacher_forcing: float = 1.0
    budget: int = 128
    seed: int = 0


class Adam:
    """Adam; with `decoupled_decay` > 0 it becomes the decoupled-decay variant."""

    def __init__(self, lr: float, betas: tuple[float, float], eps: float, decoupled_decay: float = 0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.decay = decoupled_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], names: Iterable[str]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for name in names:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.b1 * self.m[name] + (1.0 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1.0 - self.b2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            if self.decay:
                params[name] -= self.lr * self.decay * params[name]
            params[name] -= self.lr * update


@dataclass
class HistoryPoint:
    step: int
    epoch: float
    train_loss: float
    val_loss: float
    loss1: float
    loss2: float
    sigma1: float
    sigma2: float


@dataclass
class Trainer:
    net: Network
    vocab: TextVocab
    config: TrainConfig
    history: list[HistoryPoint] = field(default_factory=list)
    best_params: dict[str, np.ndarray] | None = None
    best_val: float = float("inf")
    step: int = 0
    rng_state: dict | None = None


def _pair_sample(
    pair: Pair, corpus: Corpus, th: ts.Thesaurus, vocab: TextVocab, budget: int, mode: str
) -> Sample:
    desc = th.get(pair.descriptor)
    doc = corpus.get(pair.doc_id)
    assembled = assemble_input(desc.label, desc.description, doc.abstract, budget)
    targets = decoder_targets(th, pair.descriptor) if (mode == "mtl" and pair.positive) else ()
    return prepare_sample(assembled, vocab, 1.0 if pair.positive else 0.0, targets)


def train(
    pairs: PairSet,
    corpus: Corpus,
    th: ts.Thesaurus,
    config: TrainConfig,
    encoder: EncoderConfig | None = None,
    token_embeddings: EmbeddingTable | None = None,
) -> Trainer:
    """Train on the train partition of a balanced PairSet; validate on val.

    `token_embeddings` optionally supplies frozen per-token input vectors
    (keyed by token string) in place of the learned embedding table, so the
    decoder architecture can be exercised on externally produced
    representations.
    """
    if pairs.configuration != "balanced":
        raise ValueError("training expects the balanced configuration")
    vocab = build_text_vocab(corpus, th)
    enc_config = encoder or EncoderConfig(text_vocab=len(vocab))
    if enc_config.text_vocab != len(vocab):
        enc_config = EncoderConfig(
            text_vocab=len(vocab),
            width=enc_config.width,
            max_len=enc_config.max_len,
            kind=enc_config.kind,
            layers=enc_config.layers,
        )
    net = Network(enc_config, seed=config.seed)
    frozen: set[str] = set()
    if token_embeddings is not None:
        if token_embeddings.dim != enc_config.width:
            raise ValueError(
                f"token embedding width {token_embeddings.dim} != encoder width {enc_config.width}"
            )
        for token, idx in vocab.index.items():
            if token in token_embeddings:
                net.params["tok_emb"][idx] = token_embeddings.get(token).astype(np.float64)
        frozen.add("tok_emb")
    trainer = Trainer(net=net, vocab=vocab, config=config)

    train_pairs = pairs.for_partition("train")
    val_pairs = pairs.for_partition("val")
    if not train_pairs:
        raise ValueError("no training pairs in the train partition")
    train_samples = [
        _pair_sample(p, corpus, th, vocab, config.budget, config.mode) for p in train_pairs
    ]
    val_samples = [
        _pair_sample(p, corpus, th, vocab, config.budget, config.mode) for p in val_pairs
    ]

    main_names = sorted(n for n in net.params if net.group_of(n) == MAIN_GROUP and n not in frozen)
    dec_names = sorted(n for n in net.params if net.group_of(n) == DECODER_GROUP)
    opt_main = Adam(config.lr_main, config.betas, config.adam_eps, decoupled_decay=config.weight_decay)
    opt_dec = Adam(config.lr_decoder, config.betas, config.adam_eps)

    rng = np.random.default_rng(config.seed)
    steps_per_epoch = max(1, (len(train_samples) + config.batch_size - 1) // config.batch_size)
    total_steps = int(round(config.epochs * steps_per_epoch))
    ckpt_interval = max(1, int(round(config.checkpoint_every * steps_per_epoch)))

    order = rng.permutation(len(train_samples))
    cursor = 0
    running: list[float] = []
    for _ in range(total_steps):
        if cursor >= len(order):
            order = rng.permutation(len(train_samples))
            cursor = 0
        idx = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        batch = [train_samples[i] for i in idx]
        result = batch_loss(
            net,
            batch,
            mode=config.mode,
            compute_grads=True,
            teacher_forcing=config.teacher_forcing,
            rng=rng,
        )
        if not np.isfinite(result.total):
            raise DivergedLoss(f"training loss diverged at step {trainer.step}")
        assert result.grads is not None
        opt_main.step(net.params, result.grads, main_names)
        opt_dec.step(net.params, result.grads, dec_names)
        trainer.step += 1
        running.append(result.total)
        if trainer.step % ckpt_interval == 0 or trainer.step == total_steps:
            val_loss = evaluate_loss(net, val_samples, config.mode) if val_samples else float(np.mean(running))
            point = HistoryPoint(
                step=trainer.step,
                epoch=trainer.step / steps_per_epoch,
                train_loss=float(np.mean(running)),
                val_loss=val_loss,
                loss1=result.loss1,
                loss2=result.loss2,
                sigma1=float(np.exp(net.params["mtl.s1"] / 2.0)),
                sigma2=float(np.exp(net.params["mtl.s2"] / 2.0)),
            )
            trainer.history.append(point)
            running = []
            if val_loss <= trainer.best_val:
                trainer.best_val = val_loss
                trainer.best_params = {k: v.copy() for k, v in net.params.items()}
    if trainer.best_params is not None:
        net.params = trainer.best_params
    trainer.rng_state = _json_safe(rng.bit_generator.state)
    return trainer


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def evaluate_loss(net: Network, samples: list[Sample], mode: str, batch_size: int = 64) -> float:
    if not samples:
        return float("nan")
    total = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        result = batch_loss(net, chunk, mode=mode, compute_grads=False)
        total += result.total * len(chunk)
    return total / len(samples)


def save_model(trainer: Trainer, path: str) -> None:
    cfg = trainer.net.config
    ckpt = ct.Checkpoint(
        config={
            "text_vocab": cfg.text_vocab,
            "width": cfg.width,
            "max_len": cfg.max_len,
            "kind": cfg.kind,
            "layers": cfg.layers,
            "mode": trainer.config.mode,
            "budget": trainer.config.budget,
            "seed": trainer.config.seed,
            "lr_main": trainer.config.lr_main,
            "lr_decoder": trainer.config.lr_decoder,
            "weight_decay": trainer.config.weight_decay,
            "vocab_tokens": list(trainer.vocab.tokens),
        },
        tensors=dict(trainer.net.params),
        rng_state=trainer.rng_state or {"seed": trainer.config.seed},
        step=trainer.step,
        extra={
            "best_val": trainer.best_val,
            "history": [vars(h) for h in trainer.history],
        },
    )
    ct.save_checkpoint(ckpt, path)


def load_model(path: str) -> Trainer:
    ckpt = ct.load_checkpoint(path)
    cfg = ckpt.config
    enc_config = EncoderConfig(
        text_vocab=int(cfg["text_vocab"]),
        width=int(cfg["width"]),
        max_len=int(cfg["max_len"]),
        kind=str(cfg["kind"]),
        layers=int(cfg["layers"]),
    )
    net = Network(enc_config, seed=int(cfg.get("seed", 0)))
    for name in net.params:
        net.params[name] = ckpt.tensors[name].astype(np.float64)
    vocab = TextVocab(tuple(cfg["vocab_tokens"]))
    train_config = TrainConfig(
        mode=str(cfg.get("mode", "mtl")),
        budget=int(cfg.get("budget", 128)),
        seed=int(cfg.get("seed", 0)),
    )
    trainer = Trainer(net=net, vocab=vocab, config=train_config, step=ckpt.step)
    trainer.best_val = float(ckpt.extra.get("best_val", float("inf")))
    return trainer


def predict_pairs(
    trainer: Trainer, pairs: list[Pair], corpus: Corpus, th: ts.Thesaurus
) -> dict[tuple[str, str], float]:
    """Matching probability for each (descriptor, doc) pair."""
    out: dict[tuple[str, str], float] = {}
    for pair in pairs:
        sample = _pair_sample(pair, corpus, th, trainer.vocab, trainer.config.budget, "stl")
        enc = trainer.net.encode(sample.token_ids, sample.overlap, sample.desc_mask)
        out[(pair.descriptor, pair.doc_id)] = trainer.net.classify(enc)
    return out


def greedy_tree_numbers(
    trainer: Trainer,
    th: ts.Thesaurus,
    descriptor_ids: Iterable[str],
    corpus: Corpus | None = None,
) -> dict[str, list[int]]:
    """Greedy-decoded token ids per descriptor.

    With a corpus, each descriptor is paired with the first document it
    annotates so the encoder sees a training-shaped input; otherwise the
    abstract is left empty.
    """
    doc_of: dict[str, str] = {}
    if corpus is not None:
        for doc_id in sorted(corpus.docs):
            for label in corpus.get(doc_id).labels:
                doc_of.setdefault(label, doc_id)
    out: dict[str, list[int]] = {}
    for desc_id in descriptor_ids:
        desc = th.get(desc_id)
        abstract = corpus.get(doc_of[desc_id]).abstract if corpus and desc_id in doc_of else ""
        assembled = assemble_input(desc.label, desc.description, abstract, trainer.config.budget)
        sample = prepare_sample(assembled, trainer.vocab, 1.0)
        enc = trainer.net.encode(sample.token_ids, sample.overlap, sample.desc_mask)
        dec = trainer.net.decode_tree_number(enc)
        out[desc_id] = list(dec.generated or [])
    return out


def decoded_is_well_formed(token_ids: list[int]) -> bool:
    """True when, after dropping BOS/EOS/PAD, the ids spell LETTER D2 (DOT D3)*."""
    syms = [ts.vocab_token(i) for i in token_ids if i not in (ts.BOS_ID, ts.EOS_ID, ts.PAD_ID)]
    if len(syms) < 2:
        return False
    if not (isinstance(syms[0], ts.TreeToken) and syms[0].kind is ts.TokenKind.LETTER):
        return False
    if not (isinstance(syms[1], ts.TreeToken) and syms[1].kind is ts.TokenKind.D2):
        return False
    rest = syms[2:]
    if len(rest) % 2:
        return False
    for dot, digits in zip(rest[::2], rest[1::2]):
        if dot != ts.DOT:
            return False
        if not (isinstance(digits, ts.TreeToken) and digits.kind is ts.TokenKind.D3):
            return False
    if len(rest) // 2 + 1 > ts.MAX_DEPTH:
        return False
    return True


def embed_descriptors(
    trainer: Trainer,
    th: ts.Thesaurus,
    descriptor_ids: Iterable[str] | None = None,
    pooling: str = "first-position",
) -> EmbeddingTable:
    """Label representations from the trained encoder.

    first-position takes the leading state of the assembled label input;
    mean/max pool over the label and description token states.
    """
    ids = list(descriptor_ids) if descriptor_ids is not None else th.ids()
    table = EmbeddingTable(dim=trainer.net.config.width, pooling=pooling, producer="meshkit-model")
    for desc_id in ids:
        desc = th.get(desc_id)
        assembled = assemble_input(desc.label, desc.description, "", trainer.config.budget)
        sample = prepare_sample(assembled, trainer.vocab, 1.0)
        enc = trainer.net.encode(sample.token_ids, sample.overlap, sample.desc_mask)
        if pooling == "first-position":
            vec = enc.cls_state
        else:
            word_rows = [i for i, tok in enumerate(assembled.tokens) if tok not in (CLS, COLON, SEP)]
            states = enc.seq_states[word_rows]
            vec = states.mean(axis=0) if pooling == "mean" else states.max(axis=0)
        table.add(desc_id, vec.astype(np.float32))
    return table
