"""Encoder, classification head, attention-GRU decoder, and multi-task loss.

Everything runs in float64 numpy with explicit forward caches and
hand-written backward passes, so gradients can be audited against central
finite differences. The decoder step follows, in order: dot-product scores
between the masked encoder states and the hidden state, a softmax over
unmasked positions, the attention-weighted sum of states, an element-wise sum
with the previous token embedding, and one GRU cell update whose output feeds
a dense projection plus log-softmax over the 1130-way tree vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np

from .. import thesaurus as ts
from ..pairs import AssembledInput, SEP
from .textvocab import SPECIALS, TextVocab

TREE_VOCAB = ts.VOCAB_SIZE  # 1130
MAX_DECODE_LEN = 31  # BOS + depth-15 number with dots + EOS fits


class ModelError(Exception):
    pass


class SequenceTooLong(ModelError):
    pass


class NonFiniteActivation(ModelError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    text_vocab: int
    width: int = 64
    max_len: int = 128
    kind: str = "bag"  # bag | attn
    layers: int = 1

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError("width must be positive")
        if self.max_len < 8:
            raise ValueError("max_len must be >= 8")
        if self.kind not in ("bag", "attn"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")


@dataclass
class EncoderOutput:
    seq_states: np.ndarray  # (L, m)
    cls_state: np.ndarray  # (m,)
    desc_mask: np.ndarray  # (L,) bool
    cache: Any = None

    @property
    def masked_states(self) -> np.ndarray:
        """States with non-description rows zeroed, as seen by the decoder."""
        return self.seq_states * self.desc_mask[:, None]


@dataclass
class DecoderState:
    h: np.ndarray  # (m,)
    prev_token: int
    step: int


@dataclass
class DecodeResult:
    log_probs: list[np.ndarray]  # per step, (1130,)
    inputs_used: list[int]  # token id fed at each step
    generated: list[int] | None  # greedy ids incl. EOS, generation mode only
    nll: float  # mean over scored steps, 0.0 in generation mode
    cache: Any = None


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def log_sigmoid(x: float) -> float:
    return -float(np.logaddexp(0.0, -x))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


MAIN_GROUP = "main"
DECODER_GROUP = "decoder"


class Network:
    """Parameter container plus forward/backward passes."""

    def __init__(self, config: EncoderConfig, seed: int = 0, init_scale: float = 0.1):
        self.config = config
        m = config.width
        rng = np.random.default_rng(seed)

        def mat(*shape: int) -> np.ndarray:
            return rng.normal(0.0, init_scale, size=shape)

        p: dict[str, np.ndarray] = {
            "tok_emb": mat(config.text_vocab, m),
            "overlap_vec": mat(m),
            "head.w": mat(m),
            "head.b": np.zeros(()),
            "tree_emb": mat(TREE_VOCAB, m),
            "gru.wr": mat(m, m),
            "gru.wz": mat(m, m),
            "gru.wn": mat(m, m),
            "gru.ur": mat(m, m),
            "gru.uz": mat(m, m),
            "gru.un": mat(m, m),
            "gru.br": np.zeros(m),
            "gru.bz": np.zeros(m),
            "gru.bn": np.zeros(m),
            "out.w": mat(m, TREE_VOCAB),
            "out.b": np.zeros(TREE_VOCAB),
            "mtl.s1": np.zeros(()),  # log sigma_1^2
            "mtl.s2": np.zeros(()),
        }
        if config.kind == "bag":
            p["enc.w1"] = mat(m, m)
            p["enc.w2"] = mat(m, m)
            p["enc.b"] = np.zeros(m)
        else:
            p["pos_emb"] = mat(config.max_len, m)
            for layer in range(config.layers):
                for w in ("wq", "wk", "wv", "wf1", "wf2"):
                    p[f"enc{layer}.{w}"] = mat(m, m)
                p[f"enc{layer}.bf1"] = np.zeros(m)
                p[f"enc{layer}.bf2"] = np.zeros(m)
        self.params = p

    def group_of(self, name: str) -> str:
        if name.startswith(("tree_emb", "gru.", "out.")):
            return DECODER_GROUP
        return MAIN_GROUP

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # ---------------- encoder ----------------

    def encode(self, token_ids: np.ndarray, overlap: np.ndarray, desc_mask: np.ndarray) -> EncoderOutput:
        if len(token_ids) > self.config.max_len:
            raise SequenceTooLong(f"{len(token_ids)} tokens exceeds max length {self.config.max_len}")
        p = self.params
        x = p["tok_emb"][token_ids] + overlap[:, None] * p["overlap_vec"]
        if self.config.kind == "bag":
            c = x.mean(axis=0)
            pre = x @ p["enc.w1"] + c @ p["enc.w2"] + p["enc.b"]
            h = np.tanh(pre)
            cache = {"kind": "bag", "ids": token_ids, "overlap": overlap, "x": x, "c": c, "h": h}
            return EncoderOutput(h, h[0], desc_mask.astype(bool), cache)
        x = x + p["pos_emb"][: len(token_ids)]
        layers = []
        cur = x
        for layer in range(self.config.layers):
            q = cur @ p[f"enc{layer}.wq"]
            k = cur @ p[f"enc{layer}.wk"]
            v = cur @ p[f"enc{layer}.wv"]
            scores = q @ k.T / np.sqrt(self.config.width)
            attn = np.exp(scores - scores.max(axis=1, keepdims=True))
            attn /= attn.sum(axis=1, keepdims=True)
            mixed = cur + attn @ v
            f = np.tanh(mixed @ p[f"enc{layer}.wf1"] + p[f"enc{layer}.bf1"])
            nxt = mixed + f @ p[f"enc{layer}.wf2"] + p[f"enc{layer}.bf2"]
            layers.append({"x": cur, "q": q, "k": k, "v": v, "attn": attn, "mixed": mixed, "f": f})
            cur = nxt
        cache = {"kind": "attn", "ids": token_ids, "overlap": overlap, "layers": layers, "out": cur}
        return EncoderOutput(cur, cur[0], desc_mask.astype(bool), cache)

    def encode_backward(self, enc: EncoderOutput, d_states: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        """Accumulate parameter gradients given d(seq_states)."""
        p = self.params
        cache = enc.cache
        ids = cache["ids"]
        if cache["kind"] == "bag":
            h, x, c = cache["h"], cache["x"], cache["c"]
            d_pre = d_states * (1.0 - h * h)
            grads["enc.w1"] += x.T @ d_pre
            grads["enc.w2"] += np.outer(c, d_pre.sum(axis=0))
            grads["enc.b"] += d_pre.sum(axis=0)
            dx = d_pre @ p["enc.w1"].T
            dc = d_pre.sum(axis=0) @ p["enc.w2"].T
            dx += dc[None, :] / len(ids)
            self._embed_backward(cache, dx, grads)
            return
        cur_grad = d_states
        for layer in reversed(range(self.config.layers)):
            lc = cache["layers"][layer]
            x, q, k, v, attn, mixed, f = lc["x"], lc["q"], lc["k"], lc["v"], lc["attn"], lc["mixed"], lc["f"]
            d_f = cur_grad @ p[f"enc{layer}.wf2"].T
            grads[f"enc{layer}.wf2"] += f.T @ cur_grad
            grads[f"enc{layer}.bf2"] += cur_grad.sum(axis=0)
            d_fpre = d_f * (1.0 - f * f)
            grads[f"enc{layer}.wf1"] += mixed.T @ d_fpre
            grads[f"enc{layer}.bf1"] += d_fpre.sum(axis=0)
            d_mixed = cur_grad + d_fpre @ p[f"enc{layer}.wf1"].T
            d_attn = d_mixed @ v.T
            d_v = attn.T @ d_mixed
            row_dot = (attn * d_attn).sum(axis=1, keepdims=True)
            d_scores = attn * (d_attn - row_dot)
            scale = 1.0 / np.sqrt(self.config.width)
            d_q = d_scores @ k * scale
            d_k = d_scores.T @ q * scale
            grads[f"enc{layer}.wq"] += x.T @ d_q
            grads[f"enc{layer}.wk"] += x.T @ d_k
            grads[f"enc{layer}.wv"] += x.T @ d_v
            cur_grad = (
                d_mixed
                + d_q @ p[f"enc{layer}.wq"].T
                + d_k @ p[f"enc{layer}.wk"].T
                + d_v @ p[f"enc{layer}.wv"].T
            )
        grads["pos_emb"][: len(ids)] += cur_grad
        self._embed_backward(cache, cur_grad, grads)

    def _embed_backward(self, cache: dict, dx: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        np.add.at(grads["tok_emb"], cache["ids"], dx)
        grads["overlap_vec"] += cache["overlap"] @ dx

    # ---------------- classification head ----------------

    def classify(self, enc: EncoderOutput) -> float:
        z = float(enc.cls_state @ self.params["head.w"] + self.params["head.b"])
        return float(sigmoid(z))

    def classify_logit(self, enc: EncoderOutput) -> float:
        return float(enc.cls_state @ self.params["head.w"] + self.params["head.b"])

    # ---------------- decoder ----------------

    def init_decoder_state(self, enc: EncoderOutput) -> DecoderState:
        # the decoder starts from the classification-side representation
        return DecoderState(h=enc.cls_state.copy(), prev_token=ts.BOS_ID, step=0)

    def decode_step(self, state: DecoderState, enc: EncoderOutput) -> tuple[DecoderState, np.ndarray, dict]:
        p = self.params
        masked = enc.masked_states
        mask = enc.desc_mask
        scores = masked @ state.h
        if mask.any():
            shifted = np.where(mask, scores, -np.inf)
            weights = np.exp(shifted - shifted[mask].max())
            weights[~mask] = 0.0
            weights /= weights.sum()
            assert weights.min() >= 0.0 and abs(weights.sum() - 1.0) < 1e-9
        else:
            weights = np.zeros_like(scores)
        attn_applied = weights @ masked
        x = p["tree_emb"][state.prev_token] + attn_applied
        h = state.h
        a_r = x @ p["gru.wr"] + h @ p["gru.ur"] + p["gru.br"]
        a_z = x @ p["gru.wz"] + h @ p["gru.uz"] + p["gru.bz"]
        r = sigmoid(a_r)
        z = sigmoid(a_z)
        rh = r * h
        a_n = x @ p["gru.wn"] + rh @ p["gru.un"] + p["gru.bn"]
        n = np.tanh(a_n)
        h_new = z * h + (1.0 - z) * n
        if not np.all(np.isfinite(h_new)):
            raise NonFiniteActivation(f"decoder hidden state diverged at step {state.step}")
        logits = h_new @ p["out.w"] + p["out.b"]
        log_probs = log_softmax(logits)
        cache = {
            "h_in": h,
            "prev": state.prev_token,
            "weights": weights,
            "x": x,
            "r": r,
            "z": z,
            "rh": rh,
            "n": n,
            "h_out": h_new,
            "probs": np.exp(log_probs),
        }
        return DecoderState(h=h_new, prev_token=state.prev_token, step=state.step + 1), log_probs, cache

    def decode_tree_number(
        self,
        enc: EncoderOutput,
        target: Sequence[int] | None = None,
        teacher_forcing: float = 1.0,
        rng: np.random.Generator | None = None,
        max_len: int = MAX_DECODE_LEN,
    ) -> DecodeResult:
        """Score a gold target (teacher forcing) or greedily generate.

        With a target, step j feeds token target[j] and scores target[j+1];
        at teacher_forcing < 1.0 the fed token may be the previous argmax
        instead (rng decides). Without a target, greedy generation runs until
        EOS or the length cap.
        """
        state = self.init_decoder_state(enc)
        log_probs: list[np.ndarray] = []
        inputs_used: list[int] = []
        caches: list[dict] = []
        if target is not None:
            nll = 0.0
            prev_argmax = ts.BOS_ID
            for j in range(len(target) - 1):
                feed = target[j]
                if teacher_forcing < 1.0 and j > 0:
                    if rng is None or rng.random() >= teacher_forcing:
                        feed = prev_argmax
                state.prev_token = int(feed)
                state, lp, cache = self.decode_step(state, enc)
                gold = int(target[j + 1])
                cache["gold"] = gold
                nll -= float(lp[gold])
                prev_argmax = int(np.argmax(lp))
                inputs_used.append(int(feed))
                log_probs.append(lp)
                caches.append(cache)
            steps = max(len(target) - 1, 1)
            return DecodeResult(log_probs, inputs_used, None, nll / steps, caches)
        generated: list[int] = []
        token = ts.BOS_ID
        for _ in range(max_len):
            state.prev_token = token
            state, lp, _cache = self.decode_step(state, enc)
            token = int(np.argmax(lp))
            inputs_used.append(state.prev_token)
            log_probs.append(lp)
            generated.append(token)
            if token == ts.EOS_ID:
                break
        return DecodeResult(log_probs, inputs_used, generated, 0.0, None)

    def decode_backward(
        self,
        enc: EncoderOutput,
        caches: list[dict],
        step_weight: float,
        grads: dict[str, np.ndarray],
    ) -> tuple[np.ndarray, np.ndarray]:
        """Backprop through scored decoder steps.

        step_weight scales each step's NLL gradient (1/steps averaging and
        the multi-task coefficient fold in here). Returns (d_seq_states,
        d_cls_state) to feed the encoder backward pass.
        """
        p = self.params
        masked = enc.masked_states
        d_states = np.zeros_like(enc.seq_states)
        d_h = np.zeros_like(enc.cls_state)
        for cache in reversed(caches):
            d_logits = cache["probs"].copy() * step_weight
            d_logits[cache["gold"]] -= step_weight
            grads["out.w"] += np.outer(cache["h_out"], d_logits)
            grads["out.b"] += d_logits
            d_h_out = p["out.w"] @ d_logits + d_h
            # GRU cell backward
            h_in, r, z, rh, n, x = cache["h_in"], cache["r"], cache["z"], cache["rh"], cache["n"], cache["x"]
            d_z = d_h_out * (h_in - n)
            d_n = d_h_out * (1.0 - z)
            d_h_in = d_h_out * z
            d_an = d_n * (1.0 - n * n)
            grads["gru.wn"] += np.outer(x, d_an)
            grads["gru.un"] += np.outer(rh, d_an)
            grads["gru.bn"] += d_an
            d_x = p["gru.wn"] @ d_an
            d_rh = p["gru.un"] @ d_an
            d_r = d_rh * h_in
            d_h_in += d_rh * r
            d_ar = d_r * r * (1.0 - r)
            grads["gru.wr"] += np.outer(x, d_ar)
            grads["gru.ur"] += np.outer(h_in, d_ar)
            grads["gru.br"] += d_ar
            d_x += p["gru.wr"] @ d_ar
            d_h_in += p["gru.ur"] @ d_ar
            d_az = d_z * z * (1.0 - z)
            grads["gru.wz"] += np.outer(x, d_az)
            grads["gru.uz"] += np.outer(h_in, d_az)
            grads["gru.bz"] += d_az
            d_x += p["gru.wz"] @ d_az
            d_h_in += p["gru.uz"] @ d_az
            # x = tree_emb[prev] + attention-applied vector
            grads["tree_emb"][cache["prev"]] += d_x
            weights = cache["weights"]
            d_weights = masked @ d_x
            if weights.sum() > 0.0:
                dot = float(weights @ d_weights)
                d_scores = weights * (d_weights - dot)
            else:
                d_scores = np.zeros_like(weights)
            d_states += np.outer(weights, d_x) + np.outer(d_scores, cache["h_in"])
            d_h_in += masked.T @ d_scores
            d_h = d_h_in
        d_states *= enc.desc_mask[:, None]
        return d_states, d_h


def multi_task_loss(loss1: float, loss2: float, s1: float, s2: float) -> float:
    """Uncertainty-weighted sum: loss1/(2 sigma1^2) + loss2/(2 sigma2^2) +
    log(sigma1 sigma2), with s_i = log sigma_i^2."""
    return float(loss1 * np.exp(-s1) / 2.0 + loss2 * np.exp(-s2) / 2.0 + 0.5 * (s1 + s2))


def multi_task_loss_grads(loss1: float, loss2: float, s1: float, s2: float) -> dict[str, float]:
    """Partial derivatives of the combined loss."""
    c1 = np.exp(-s1) / 2.0
    c2 = np.exp(-s2) / 2.0
    return {
        "d_loss1": float(c1),
        "d_loss2": float(c2),
        "d_s1": float(-loss1 * c1 + 0.5),
        "d_s2": float(-loss2 * c2 + 0.5),
    }


@dataclass
class Sample:
    token_ids: np.ndarray
    overlap: np.ndarray
    desc_mask: np.ndarray
    label: float  # 1.0 positive, 0.0 negative
    targets: tuple[tuple[int, ...], ...] = ()  # decoder targets, positives only


def prepare_sample(
    assembled: AssembledInput, vocab: TextVocab, label: float, targets: Iterable[Sequence[int]] = ()
) -> Sample:
    ids = np.array([vocab.id(t) for t in assembled.tokens], dtype=np.int64)
    overlap = overlap_flags(assembled.tokens)
    mask = np.array(assembled.desc_mask, dtype=bool)
    return Sample(ids, overlap, mask, label, tuple(tuple(t) for t in targets))


def overlap_flags(tokens: Sequence[str]) -> np.ndarray:
    """1.0 where a word token occurs on both sides of the separator."""
    try:
        sep = tokens.index(SEP)
    except ValueError:
        return np.zeros(len(tokens))
    specials = set(SPECIALS)
    left = {t for t in tokens[1:sep] if t not in specials}
    right = {t for t in tokens[sep + 1 :] if t not in specials}
    both = left & right
    return np.array([1.0 if t in both else 0.0 for t in tokens])


@dataclass
class BatchResult:
    total: float
    loss1: float
    loss2: float
    n_cls: int
    n_dec: int
    grads: dict[str, np.ndarray] | None = None


def batch_loss(
    net: Network,
    batch: Sequence[Sample],
    mode: str = "mtl",
    compute_grads: bool = True,
    teacher_forcing: float = 1.0,
    rng: np.random.Generator | None = None,
) -> BatchResult:
    """Mean classification BCE, mean decoder NLL over targets, and their
    uncertainty-weighted combination in MTL mode.
    """
    if mode not in ("stl", "mtl"):
        raise ValueError(f"unknown mode {mode!r}")
    grads = net.zero_grads() if compute_grads else None
    n_cls = len(batch)
    dec_runs: list[tuple[EncoderOutput, DecodeResult]] = []
    cls_terms: list[tuple[EncoderOutput, float, float]] = []  # enc, z, y
    loss1 = 0.0
    for sample in batch:
        enc = net.encode(sample.token_ids, sample.overlap, sample.desc_mask)
        z = net.classify_logit(enc)
        y = sample.label
        # stable BCE: y*softplus(-z) + (1-y)*softplus(z)
        loss1 += y * float(np.logaddexp(0.0, -z)) + (1.0 - y) * float(np.logaddexp(0.0, z))
        cls_terms.append((enc, z, y))
        if mode == "mtl" and sample.label == 1.0:
            for target in sample.targets:
                dec = net.decode_tree_number(
                    enc, target=target, teacher_forcing=teacher_forcing, rng=rng
                )
                dec_runs.append((enc, dec))
    loss1 /= max(n_cls, 1)
    n_dec = len(dec_runs)
    loss2 = sum(dec.nll for _, dec in dec_runs) / n_dec if n_dec else 0.0
    if mode == "stl":
        total = loss1
        c1, c2 = 1.0, 0.0
    else:
        s1 = float(net.params["mtl.s1"])
        s2 = float(net.params["mtl.s2"])
        total = multi_task_loss(loss1, loss2, s1, s2)
        mt = multi_task_loss_grads(loss1, loss2, s1, s2)
        c1, c2 = mt["d_loss1"], mt["d_loss2"]
    if not compute_grads:
        return BatchResult(total, loss1, loss2, n_cls, n_dec)

    assert grads is not None
    if mode == "mtl":
        grads["mtl.s1"] += mt["d_s1"]
        grads["mtl.s2"] += mt["d_s2"]
    # per-sample encoder gradients: classification path plus decoder path
    d_states_by_enc: dict[int, np.ndarray] = {}
    d_cls_by_enc: dict[int, np.ndarray] = {}
    for enc, z, y in cls_terms:
        dz = (float(sigmoid(z)) - y) * c1 / n_cls
        grads["head.w"] += dz * enc.cls_state
        grads["head.b"] += dz
        d_cls_by_enc[id(enc)] = dz * net.params["head.w"]
        d_states_by_enc[id(enc)] = np.zeros_like(enc.seq_states)
    for enc, dec in dec_runs:
        steps = max(len(dec.log_probs), 1)
        step_weight = c2 / (n_dec * steps)
        d_states, d_h0 = net.decode_backward(enc, dec.cache, step_weight, grads)
        d_states_by_enc[id(enc)] += d_states
        d_cls_by_enc[id(enc)] += d_h0
    for enc, _z, _y in cls_terms:
        d_states = d_states_by_enc[id(enc)]
        d_states[0] += d_cls_by_enc[id(enc)]  # cls_state is row 0's final state
        net.encode_backward(enc, d_states, grads)
    return BatchResult(total, loss1, loss2, n_cls, n_dec, grads)


def grad_check(
    net: Network,
    batch: Sequence[Sample],
    epsilon: float = 1e-4,
    names: Iterable[str] | None = None,
    max_coords_per_tensor: int = 40,
    mode: str = "mtl",
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter tensor (or the named subset) on a seeded random
    sample of coordinates. The error denominator is floored at 1e-6 so that
    coordinates with near-zero gradients are judged on absolute agreement.
    """
    result = batch_loss(net, batch, mode=mode, compute_grads=True)
    assert result.grads is not None
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(net.params):
        if names is not None and name not in set(names):
            continue
        param = net.params[name]
        flat = param.reshape(-1)
        analytic = result.grads[name].reshape(-1)
        size = flat.size
        coords = (
            np.arange(size)
            if size <= max_coords_per_tensor
            else rng.choice(size, size=max_coords_per_tensor, replace=False)
        )
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + epsilon
            up = batch_loss(net, batch, mode=mode, compute_grads=False).total
            flat[idx] = original - epsilon
            down = batch_loss(net, batch, mode=mode, compute_grads=False).total
            flat[idx] = original
            numeric = (up - down) / (2.0 * epsilon)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
            worst = max(worst, rel)
    return worst
