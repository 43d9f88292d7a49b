from __future__ import annotations

from dataclasses import asdict, dataclass, fields

RELATION_POLICIES = ("entity_only", "entity_or_subtype")
ENCODERS = ("toy", "file")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 32
    width_embedding_dim: int = 16
    max_span_width: int = 8
    neg_entity_samples: int = 50
    neg_relation_samples: int = 20
    learning_rate: float = 0.02
    epochs: int = 200
    seed: int = 7
    relation_candidate_policy: str = "entity_or_subtype"
    encoder: str = "toy"

    def __post_init__(self):
        for name in ("hidden_dim", "width_embedding_dim", "max_span_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("neg_entity_samples", "neg_relation_samples", "epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.relation_candidate_policy not in RELATION_POLICIES:
            raise ValueError(f"relation_candidate_policy must be one of {RELATION_POLICIES}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**data)
