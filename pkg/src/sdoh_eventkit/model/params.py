"""Parameter container with the head shape contract checked at construction."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..schema import LabeledArgType, LabelInventory
from .config import ModelConfig

UNK = "<unk>"
_DIGITS = re.compile(r"\d")


def normalize_token(text: str) -> str:
    return _DIGITS.sub("0", text.lower())


def build_vocab(token_texts) -> tuple[str, ...]:
    """Sorted vocabulary of normalized tokens with UNK at index 0."""
    words = sorted({normalize_token(t) for t in token_texts})
    return (UNK,) + tuple(w for w in words if w != UNK)


def expected_shapes(
    config: ModelConfig, inv: LabelInventory, vocab_size: int | None
) -> dict[str, tuple[int, ...]]:
    d, dw, k = config.hidden_dim, config.width_embedding_dim, config.max_span_width
    n_entity = len(inv.entity_labels)
    shapes: dict[str, tuple[int, ...]] = {}
    if config.encoder == "toy":
        shapes.update(
            {
                "encoder.embed": (vocab_size, d),
                "encoder.w_self": (d, d),
                "encoder.w_neighbor": (d, d),
                "encoder.bias": (d,),
                "encoder.w_cls": (d, d),
                "encoder.b_cls": (d,),
            }
        )
    shapes["width_embed"] = (k, dw)
    shapes["entity.W"] = (n_entity, 2 * d + dw)
    shapes["entity.b"] = (n_entity,)
    for v in inv.labeled_types:
        n_sub = len(inv.subtype_labels[v])
        shapes[f"subtype.{v.value}.W"] = (n_sub, 2 * d + dw + n_entity)
        shapes[f"subtype.{v.value}.b"] = (n_sub,)
    n_rel = len(inv.relation_labels)
    shapes["relation.W"] = (n_rel, 3 * d + 2 * dw)
    shapes["relation.b"] = (n_rel,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    inventory: LabelInventory
    tensors: dict[str, np.ndarray]
    vocab: tuple[str, ...] = ()
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        vocab_size = len(self.vocab) if self.config.encoder == "toy" else None
        shapes = expected_shapes(self.config, self.inventory, vocab_size)
        if set(shapes) != set(self.tensors):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise ValueError(f"tensor set mismatch: missing={missing} unexpected={extra}")
        for name, shape in shapes.items():
            actual = self.tensors[name].shape
            if actual != shape:
                raise ValueError(f"shape mismatch for {name}: expected {shape}, got {actual}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ValueError(f"non-finite values in {name}")
        # keep canonical order for checkpoints and gradient checks
        self.tensors = {name: self.tensors[name] for name in shapes}
        self._index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    def token_ids(self, texts) -> np.ndarray:
        return np.array([self._index.get(normalize_token(t), 0) for t in texts], dtype=np.int64)

    def subtype_W(self, v: LabeledArgType) -> np.ndarray:
        return self.tensors[f"subtype.{v.value}.W"]

    def subtype_b(self, v: LabeledArgType) -> np.ndarray:
        return self.tensors[f"subtype.{v.value}.b"]

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            self.inventory,
            {k: v.astype(dtype, copy=True) for k, v in self.tensors.items()},
            self.vocab,
        )

    def copy(self) -> "ModelParams":
        return self.astype(next(iter(self.tensors.values())).dtype)

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of configuration, vocabulary and every tensor."""
        if self.config != other.config or self.vocab != other.vocab:
            return False
        if self.inventory.digest() != other.inventory.digest():
            return False
        if list(self.tensors) != list(other.tensors):
            return False
        return all(
            a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


def init_params(
    config: ModelConfig,
    inv: LabelInventory,
    vocab=(UNK,),
    dtype=np.float32,
) -> ModelParams:
    """Random initialization seeded by ``config.seed``.

    Weights are drawn in float64 and cast, so float32 and float64 parameter
    sets built from the same seed agree up to rounding.
    """
    rng = np.random.default_rng(config.seed)
    vocab_size = len(vocab) if config.encoder == "toy" else None
    tensors = {}
    for name, shape in expected_shapes(config, inv, vocab_size).items():
        if name.endswith(("bias", "b_cls", ".b")):
            value = np.zeros(shape)
        elif name == "encoder.embed":
            value = rng.normal(0.0, 0.5, size=shape)
        elif name == "width_embed":
            value = rng.normal(0.0, 0.1, size=shape)
        else:
            value = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape)
        tensors[name] = value.astype(dtype)
    return ModelParams(config, inv, tensors, tuple(vocab))
