from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .encoder import EncoderOutput, FileEncoder, Sentence, ToyEncoder, encode
from .gradcheck import gradient_check
from .network import (
    RawPredictions,
    SpanCandidate,
    TrainingBatch,
    candidate_count,
    entity_type_logits,
    enumerate_spans,
    forward,
    loss,
    relation_logits,
    span_representation,
    subtype_logits,
)
from .params import ModelParams, init_params
from .training import train

__all__ = [
    "CheckpointError",
    "EncoderOutput",
    "FileEncoder",
    "ModelConfig",
    "ModelParams",
    "RawPredictions",
    "Sentence",
    "SpanCandidate",
    "ToyEncoder",
    "TrainingBatch",
    "candidate_count",
    "encode",
    "entity_type_logits",
    "enumerate_spans",
    "forward",
    "gradient_check",
    "init_params",
    "load_checkpoint",
    "loss",
    "relation_logits",
    "save_checkpoint",
    "span_representation",
    "subtype_logits",
    "train",
]
