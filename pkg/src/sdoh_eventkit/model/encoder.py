"""Token encoders producing ``(h_cls, h_1..h_n)`` for a sentence.

``ToyEncoder`` is trainable: an embedding lookup followed by one tanh layer
that mixes each token with the mean of its immediate neighbours, and a
tanh transform of the mean-pooled token states for ``h_cls``.

``FileEncoder`` serves frozen vectors computed elsewhere (for example by a
transformer) from a binary sidecar file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .params import ModelParams


@dataclass(frozen=True)
class Sentence:
    document_id: str
    index: int
    texts: tuple[str, ...]
    token_offset: int = 0  # index of the first token within the document


@dataclass
class EncoderOutput:
    h_cls: np.ndarray  # (d,)
    h: np.ndarray  # (n, d)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.h_cls)) and np.all(np.isfinite(self.h))):
            raise ValueError("encoder produced non-finite values")


class ToyEncoder:
    trainable = True

    def __init__(self, params: ModelParams):
        self.params = params

    def encode(self, sentence: Sentence):
        if not sentence.texts:
            raise ValueError("cannot encode an empty sentence")
        return toy_forward(self.params, self.params.token_ids(sentence.texts))

    def backward(self, cache, d_h, d_cls, grads):
        toy_backward(self.params, cache, d_h, d_cls, grads)


def toy_forward(params: ModelParams, ids: np.ndarray):
    t = params.tensors
    emb = t["encoder.embed"][ids]
    n = len(ids)
    neighbor_sum = np.zeros_like(emb)
    neighbor_sum[1:] += emb[:-1]
    neighbor_sum[:-1] += emb[1:]
    count = np.zeros(n, dtype=emb.dtype)
    count[1:] += 1
    count[:-1] += 1
    inv_count = np.where(count > 0, 1.0 / np.maximum(count, 1), 0.0).astype(emb.dtype)
    neighbor_mean = neighbor_sum * inv_count[:, None]
    h = np.tanh(emb @ t["encoder.w_self"].T + neighbor_mean @ t["encoder.w_neighbor"].T + t["encoder.bias"])
    pooled = h.mean(axis=0)
    h_cls = np.tanh(t["encoder.w_cls"] @ pooled + t["encoder.b_cls"])
    cache = (ids, emb, neighbor_mean, inv_count, h, pooled, h_cls)
    return EncoderOutput(h_cls, h), cache


def toy_backward(params: ModelParams, cache, d_h, d_cls, grads):
    t = params.tensors
    ids, emb, neighbor_mean, inv_count, h, pooled, h_cls = cache
    n = len(ids)
    d_cpre = d_cls * (1.0 - h_cls**2)
    grads["encoder.w_cls"] += np.outer(d_cpre, pooled)
    grads["encoder.b_cls"] += d_cpre
    d_h = d_h + (t["encoder.w_cls"].T @ d_cpre) / n
    d_pre = d_h * (1.0 - h**2)
    grads["encoder.w_self"] += d_pre.T @ emb
    grads["encoder.w_neighbor"] += d_pre.T @ neighbor_mean
    grads["encoder.bias"] += d_pre.sum(axis=0)
    d_emb = d_pre @ t["encoder.w_self"]
    d_sum = (d_pre @ t["encoder.w_neighbor"]) * inv_count[:, None]
    d_emb[:-1] += d_sum[1:]
    d_emb[1:] += d_sum[:-1]
    np.add.at(grads["encoder.embed"], ids, d_emb)


def encode(tokens, params: ModelParams) -> EncoderOutput:
    """Encode a token sequence with the toy encoder held in ``params``."""
    texts = tuple(getattr(tok, "text", tok) for tok in tokens)
    out, _ = ToyEncoder(params).encode(Sentence("", 0, texts))
    return out


# --- sidecar embeddings -------------------------------------------------------

_MAGIC = b"SDEKEMB1"


@dataclass
class DocumentEmbeddings:
    cls: np.ndarray  # (n_sentences, d)
    tokens: np.ndarray  # (n_tokens, d)


def write_sidecar(path: str | Path, records: dict[str, DocumentEmbeddings]) -> None:
    """Write per-document vectors as little-endian float32 records.

    Layout per record: u32 id length, utf-8 id, u32 n_sentences, u32 n_tokens,
    u32 dim, then the sentence vectors and the token vectors.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(records)))
        for doc_id, rec in records.items():
            key = doc_id.encode("utf-8")
            n_sent, dim = rec.cls.shape
            n_tok = rec.tokens.shape[0]
            fh.write(struct.pack("<I", len(key)) + key)
            fh.write(struct.pack("<III", n_sent, n_tok, dim))
            fh.write(np.ascontiguousarray(rec.cls, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(rec.tokens, dtype="<f4").tobytes())


def read_sidecar(path: str | Path) -> dict[str, DocumentEmbeddings]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not an embedding sidecar file")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError("unexpected end of tensor data")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    records = {}
    for _ in range(count):
        (key_len,) = struct.unpack("<I", take(4))
        doc_id = take(key_len).decode("utf-8")
        n_sent, n_tok, dim = struct.unpack("<III", take(12))
        cls = np.frombuffer(take(4 * n_sent * dim), dtype="<f4").reshape(n_sent, dim)
        toks = np.frombuffer(take(4 * n_tok * dim), dtype="<f4").reshape(n_tok, dim)
        records[doc_id] = DocumentEmbeddings(cls.astype(np.float32), toks.astype(np.float32))
    return records


class FileEncoder:
    trainable = False

    def __init__(self, records: dict[str, DocumentEmbeddings], dtype=np.float32):
        self.records = records
        self.dtype = dtype

    @classmethod
    def from_file(cls, path: str | Path, dtype=np.float32) -> "FileEncoder":
        return cls(read_sidecar(path), dtype)

    def encode(self, sentence: Sentence):
        try:
            rec = self.records[sentence.document_id]
        except KeyError:
            raise KeyError(f"no precomputed embeddings for document {sentence.document_id!r}") from None
        lo = sentence.token_offset
        hi = lo + len(sentence.texts)
        if hi > rec.tokens.shape[0] or sentence.index >= rec.cls.shape[0]:
            raise ValueError(f"embeddings for {sentence.document_id!r} do not cover sentence {sentence.index}")
        out = EncoderOutput(rec.cls[sentence.index].astype(self.dtype), rec.tokens[lo:hi].astype(self.dtype))
        return out, None

    def backward(self, cache, d_h, d_cls, grads):
        pass
