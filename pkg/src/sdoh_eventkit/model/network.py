"""Span classifier heads, relation head, loss and their backward pass.

Shapes, with ``d`` the hidden size and ``dw`` the width-embedding size:

* span representation ``g``: max-pool of token states ++ width embedding, ``d + dw``
* entity input ``x``: ``g ++ h_cls``, ``2d + dw``
* subtype input: ``x ++ entity_logits``, ``2d + dw + |entity labels|``
* relation input: ``g_head ++ context ++ g_tail``, ``3d + 2dw``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..schema import LabeledArgType, LabelInventory, Span
from .config import ModelConfig
from .encoder import EncoderOutput, Sentence, ToyEncoder
from .params import ModelParams


@dataclass(frozen=True)
class SpanCandidate:
    start: int  # token index within the sentence
    width: int
    char_span: Span | None = None

    @property
    def end(self) -> int:
        return self.start + self.width


def candidate_count(n: int, k: int) -> int:
    return sum(max(0, n - w + 1) for w in range(1, k + 1))


def enumerate_spans(tokens, max_width: int) -> list[SpanCandidate]:
    """All contiguous token ranges of width 1..K, ordered by (start, width).

    ``tokens`` is either a token count or a sequence of tokens; tokens that
    carry a ``span`` attribute give the candidates their character spans.
    """
    if max_width < 1:
        raise ValueError("max_width must be >= 1")
    if isinstance(tokens, int):
        n, toks = tokens, None
    else:
        toks = list(tokens)
        n = len(toks)
    out = []
    for start in range(n):
        for width in range(1, min(max_width, n - start) + 1):
            char_span = None
            if toks is not None and hasattr(toks[start], "span"):
                char_span = Span(toks[start].span.start, toks[start + width - 1].span.end)
            out.append(SpanCandidate(start, width, char_span))
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _max_pool(h: np.ndarray, spans) -> tuple[np.ndarray, np.ndarray]:
    d = h.shape[1]
    pooled = np.empty((len(spans), d), dtype=h.dtype)
    rows = np.empty((len(spans), d), dtype=np.int64)
    cols = np.arange(d)
    for i, (start, width) in enumerate(spans):
        block = h[start:start + width]
        arg = block.argmax(axis=0)
        pooled[i] = block[arg, cols]
        rows[i] = arg + start
    return pooled, rows


def span_representation(enc: EncoderOutput, s: SpanCandidate, params: ModelParams) -> np.ndarray:
    if s.start < 0 or s.end > len(enc.h) or s.width > params.config.max_span_width:
        raise ValueError("span outside sentence bounds or wider than max_span_width")
    pooled, _ = _max_pool(enc.h, [(s.start, s.width)])
    return np.concatenate([pooled[0], params.tensors["width_embed"][s.width - 1]])


def _check_dim(vec: np.ndarray, W: np.ndarray, what: str):
    if vec.shape[-1] != W.shape[1]:
        raise ValueError(f"dimension mismatch for {what}: input {vec.shape[-1]}, expected {W.shape[1]}")


def entity_type_logits(g: np.ndarray, h_cls: np.ndarray, params: ModelParams) -> np.ndarray:
    x = np.concatenate([g, np.broadcast_to(h_cls, g.shape[:-1] + h_cls.shape[-1:])], axis=-1)
    W = params.tensors["entity.W"]
    _check_dim(x, W, "entity head")
    return x @ W.T + params.tensors["entity.b"]


def subtype_logits(x_entity_input: np.ndarray, entity_logits: np.ndarray, v: LabeledArgType, params: ModelParams):
    x = np.concatenate([x_entity_input, entity_logits], axis=-1)
    W = params.subtype_W(v)
    _check_dim(x, W, f"{v.value} subtype head")
    return x @ W.T + params.subtype_b(v)


def _context_range(a: tuple[int, int], b: tuple[int, int]) -> tuple[int, int]:
    """Token range strictly between two spans; empty when adjacent or overlapping."""
    a_end, b_end = a[0] + a[1], b[0] + b[1]
    if a_end <= b[0]:
        return a_end, b[0]
    if b_end <= a[0]:
        return b_end, a[0]
    return 0, 0


def relation_logits(enc: EncoderOutput, s_i: SpanCandidate, s_j: SpanCandidate, params: ModelParams) -> np.ndarray:
    if s_i == s_j:
        raise ValueError("relation head requires two distinct spans")
    g_i = span_representation(enc, s_i, params)
    g_j = span_representation(enc, s_j, params)
    lo, hi = _context_range((s_i.start, s_i.width), (s_j.start, s_j.width))
    c = enc.h[lo:hi].max(axis=0) if hi > lo else np.zeros(enc.h.shape[1], dtype=enc.h.dtype)
    x = np.concatenate([g_i, c, g_j])
    _check_dim(x, params.tensors["relation.W"], "relation head")
    return params.tensors["relation.W"] @ x + params.tensors["relation.b"]


@dataclass
class RawPredictions:
    candidates: list[SpanCandidate]
    entity_logits: np.ndarray  # (m, |entity labels|)
    subtype_logits: dict[LabeledArgType, np.ndarray]  # v -> (m, |subtypes v|)
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (head, tail) candidate indices
    relation_logits: np.ndarray | None = None  # (p, |relation labels|)


@dataclass
class TrainingBatch:
    """One sentence with explicit positives and sampled negatives.

    ``spans`` are (start, width) token ranges; label arrays are aligned with
    them.  ``pairs`` index into ``spans``.
    """

    sentence: Sentence
    spans: list[tuple[int, int]]
    entity_labels: np.ndarray
    subtype_labels: dict[LabeledArgType, np.ndarray]
    pairs: list[tuple[int, int]]
    relation_labels: np.ndarray
    n_gold_spans: int = 0


class _Forward:
    """Forward pass over an explicit span list, keeping what backward needs."""

    def __init__(self, params: ModelParams, enc: EncoderOutput, spans, pairs):
        t = params.tensors
        self.params = params
        self.enc = enc
        self.spans = spans
        self.pairs = pairs
        d = enc.h.shape[1]
        self.d = d
        widths = np.array([w for _, w in spans], dtype=np.int64)
        self.widths = widths
        pooled, self.pool_rows = _max_pool(enc.h, spans)
        self.g = np.concatenate([pooled, t["width_embed"][widths - 1]], axis=1)
        cls = np.broadcast_to(enc.h_cls, (len(spans), d))
        self.x = np.concatenate([self.g, cls], axis=1)
        self.entity = self.x @ t["entity.W"].T + t["entity.b"]
        self.xs = np.concatenate([self.x, self.entity], axis=1)
        self.subtype = {
            v: self.xs @ params.subtype_W(v).T + params.subtype_b(v) for v in params.inventory.labeled_types
        }
        self.set_pairs(pairs)

    def set_pairs(self, pairs):
        t = self.params.tensors
        enc, spans, d = self.enc, self.spans, self.d
        self.pairs = pairs
        self.ctx_rows = []
        if pairs:
            ctx = np.zeros((len(pairs), d), dtype=enc.h.dtype)
            for p, (i, j) in enumerate(pairs):
                lo, hi = _context_range(spans[i], spans[j])
                if hi > lo:
                    block = enc.h[lo:hi]
                    arg = block.argmax(axis=0)
                    ctx[p] = block[arg, np.arange(d)]
                    self.ctx_rows.append(arg + lo)
                else:
                    self.ctx_rows.append(None)
            heads = np.array([i for i, _ in pairs])
            tails = np.array([j for _, j in pairs])
            self.heads, self.tails = heads, tails
            self.xr = np.concatenate([self.g[heads], ctx, self.g[tails]], axis=1)
            self.relation = self.xr @ t["relation.W"].T + t["relation.b"]
        else:
            self.relation = np.zeros((0, len(self.params.inventory.relation_labels)), dtype=enc.h.dtype)

    def backward(self, d_entity, d_subtype, d_relation, grads):
        """Accumulate parameter gradients; returns (d_h, d_cls) for the encoder."""
        t = self.params.tensors
        d = self.d
        inv = self.params.inventory
        n_x = self.x.shape[1]
        d_h = np.zeros_like(self.enc.h)
        d_entity = d_entity.copy()
        d_x = np.zeros_like(self.x)
        for v in inv.labeled_types:
            ds = d_subtype[v]
            grads[f"subtype.{v.value}.W"] += ds.T @ self.xs
            grads[f"subtype.{v.value}.b"] += ds.sum(axis=0)
            d_xs = ds @ self.params.subtype_W(v)
            d_x += d_xs[:, :n_x]
            d_entity += d_xs[:, n_x:]
        grads["entity.W"] += d_entity.T @ self.x
        grads["entity.b"] += d_entity.sum(axis=0)
        d_x += d_entity @ t["entity.W"]
        gdim = self.g.shape[1]
        d_g = d_x[:, :gdim].copy()
        d_cls = d_x[:, gdim:].sum(axis=0)
        if self.pairs:
            grads["relation.W"] += d_relation.T @ self.xr
            grads["relation.b"] += d_relation.sum(axis=0)
            d_xr = d_relation @ t["relation.W"]
            np.add.at(d_g, self.heads, d_xr[:, :gdim])
            np.add.at(d_g, self.tails, d_xr[:, gdim + d:])
            d_ctx = d_xr[:, gdim:gdim + d]
            cols = np.arange(d)
            for p, rows in enumerate(self.ctx_rows):
                if rows is not None:
                    np.add.at(d_h, (rows, cols), d_ctx[p])
        np.add.at(grads["width_embed"], self.widths - 1, d_g[:, d:])
        np.add.at(d_h, (self.pool_rows.ravel(), np.tile(np.arange(d), len(self.spans))), d_g[:, :d].ravel())
        return d_h, d_cls


def _ce_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    if len(labels) == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    rows = np.arange(len(labels))
    loss = -float(logp[rows, labels].sum())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad


def loss(raw: RawPredictions, batch: TrainingBatch) -> float:
    """Unweighted sum of cross-entropies over entity, subtype and relation items.

    ``raw`` must have been computed over ``batch.spans`` and ``batch.pairs``
    (see :func:`forward_batch`).
    """
    total, _ = _ce_grad(raw.entity_logits, batch.entity_labels)
    for v, labels in batch.subtype_labels.items():
        total += _ce_grad(raw.subtype_logits[v], labels)[0]
    if batch.pairs:
        total += _ce_grad(raw.relation_logits, batch.relation_labels)[0]
    return total


def _encoder_for(params, encoder):
    return encoder if encoder is not None else ToyEncoder(params)


def forward_batch(params: ModelParams, batch: TrainingBatch, encoder=None) -> RawPredictions:
    enc, _ = _encoder_for(params, encoder).encode(batch.sentence)
    fw = _Forward(params, enc, batch.spans, batch.pairs)
    cands = [SpanCandidate(s, w) for s, w in batch.spans]
    return RawPredictions(cands, fw.entity, fw.subtype, list(batch.pairs), fw.relation)


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def loss_and_grads(params: ModelParams, batch: TrainingBatch, encoder=None, grads=None):
    """Loss of one batch and its exact gradient with respect to every tensor."""
    encoder = _encoder_for(params, encoder)
    enc, cache = encoder.encode(batch.sentence)
    fw = _Forward(params, enc, batch.spans, batch.pairs)
    total, d_entity = _ce_grad(fw.entity, batch.entity_labels)
    d_subtype = {}
    for v in params.inventory.labeled_types:
        l, d_subtype[v] = _ce_grad(fw.subtype[v], batch.subtype_labels[v])
        total += l
    d_relation = None
    if batch.pairs:
        l, d_relation = _ce_grad(fw.relation, batch.relation_labels)
        total += l
    if grads is None:
        grads = zero_grads(params)
    d_h, d_cls = fw.backward(d_entity, d_subtype, d_relation, grads)
    if getattr(encoder, "trainable", False):
        encoder.backward(cache, d_h, d_cls, grads)
    return total, grads


def relation_gate(entity_logits, subtype_logits, policy: str) -> np.ndarray:
    """Boolean mask of candidates eligible for relation classification."""
    mask = entity_logits.argmax(axis=1) != 0
    if policy == "entity_or_subtype":
        for logits in subtype_logits.values():
            mask |= logits.argmax(axis=1) != 0
    return mask


def forward(
    sentence,
    params: ModelParams,
    config: ModelConfig | None = None,
    inv: LabelInventory | None = None,
    encoder=None,
) -> RawPredictions:
    """Score every candidate span of a sentence and every gated ordered pair.

    ``sentence`` is a :class:`Sentence` or a sequence of tokens (objects with
    ``text``/``span`` or plain strings).
    """
    config = config or params.config
    tokens = None
    if not isinstance(sentence, Sentence):
        tokens = list(sentence)
        sentence = Sentence("", 0, tuple(getattr(t, "text", t) for t in tokens))
    n_labels = len(params.inventory.entity_labels)
    cands = enumerate_spans(tokens if tokens is not None else len(sentence.texts), config.max_span_width)
    if not cands:
        dtype = params.tensors["entity.W"].dtype
        return RawPredictions(
            [],
            np.zeros((0, n_labels), dtype=dtype),
            {v: np.zeros((0, len(params.inventory.subtype_labels[v])), dtype=dtype) for v in params.inventory.labeled_types},
            [],
            np.zeros((0, len(params.inventory.relation_labels)), dtype=dtype),
        )
    enc, _ = _encoder_for(params, encoder).encode(sentence)
    spans = [(c.start, c.width) for c in cands]
    fw = _Forward(params, enc, spans, [])
    gated = np.flatnonzero(relation_gate(fw.entity, fw.subtype, config.relation_candidate_policy))
    pairs = [(int(i), int(j)) for i in gated for j in gated if i != j]
    if pairs:
        fw.set_pairs(pairs)
    return RawPredictions(cands, fw.entity, fw.subtype, pairs, fw.relation)
