"""Negative-sampled joint training with plain SGD."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..corpus_io import CorpusPartition, Document, tokenize
from ..schema import (
    NULL,
    AnnotationSet,
    EventType,
    LabeledArg,
    LabeledArgType,
    LabelInventory,
    SpanOnlyArgType,
    parse_type_name,
)
from .config import ModelConfig
from .encoder import Sentence, ToyEncoder
from .network import TrainingBatch, enumerate_spans, loss_and_grads, zero_grads
from .params import ModelParams, build_vocab, init_params

log = logging.getLogger(__name__)


@dataclass
class SentenceExample:
    sentence: Sentence
    n_tokens: int
    # (start, width) -> {"entity": label index, LabeledArgType: subtype index}
    gold: dict[tuple[int, int], dict] = field(default_factory=dict)
    relations: set[tuple[tuple[int, int], tuple[int, int]]] = field(default_factory=set)


@dataclass
class PrepStats:
    misaligned: int = 0
    too_wide: int = 0
    cross_sentence: int = 0
    self_relations: int = 0
    label_conflicts: int = 0


def sentences_of(doc: Document, tokenized=None) -> list[Sentence]:
    tokenized = tokenized or tokenize(doc.section_text, doc.id)
    out = []
    for idx, (lo, hi) in enumerate(tokenized.sentences):
        out.append(Sentence(doc.id, idx, tuple(t.text for t in tokenized.tokens[lo:hi]), lo))
    return out


def prepare_document(
    doc: Document,
    anns: AnnotationSet,
    config: ModelConfig,
    inv: LabelInventory,
    stats: PrepStats | None = None,
) -> list[SentenceExample]:
    """Map character-offset gold annotations onto sentence-local token ranges."""
    stats = stats if stats is not None else PrepStats()
    tokenized = tokenize(doc.section_text, doc.id)
    starts = {tok.span.start: i for i, tok in enumerate(tokenized.tokens)}
    ends = {tok.span.end: i for i, tok in enumerate(tokenized.tokens)}
    sent_of = {}
    for s_idx, (lo, hi) in enumerate(tokenized.sentences):
        for i in range(lo, hi):
            sent_of[i] = s_idx
    examples = [
        SentenceExample(sentence, len(sentence.texts)) for sentence in sentences_of(doc, tokenized)
    ]

    def locate(span):
        first, last = starts.get(span.start), ends.get(span.end)
        if first is None or last is None or last < first:
            stats.misaligned += 1
            return None
        if sent_of[first] != sent_of[last]:
            stats.cross_sentence += 1
            return None
        width = last - first + 1
        if width > config.max_span_width:
            stats.too_wide += 1
            return None
        s_idx = sent_of[first]
        return s_idx, (first - tokenized.sentences[s_idx][0], width)

    def mark(span, entity_label=None, labeled=None):
        found = locate(span)
        if found is None:
            return None
        s_idx, key = found
        slot = examples[s_idx].gold.setdefault(key, {})
        if entity_label is not None:
            current = slot.get("entity")
            if current is not None and current != entity_label:
                stats.label_conflicts += 1
                # triggers take precedence over span-only argument labels
                if inv.entity_labels[current] in {e.value for e in EventType}:
                    entity_label = current
            slot["entity"] = entity_label
        if labeled is not None:
            v, subtype = labeled
            slot[v] = inv.subtype_index(v, subtype)
        return found

    for event in anns.events:
        head = mark(event.trigger.span, entity_label=inv.entity_index(event.trigger.event_type.value))
        for arg in event.arguments:
            if isinstance(arg, LabeledArg):
                tail = mark(arg.span, labeled=(arg.arg_type, arg.subtype))
            else:
                tail = mark(arg.span, entity_label=inv.entity_index(arg.arg_type.value))
            if head is None or tail is None:
                continue
            if head[0] != tail[0]:
                stats.cross_sentence += 1
                continue
            if head[1] == tail[1]:
                stats.self_relations += 1
                continue
            examples[head[0]].relations.add((head[1], tail[1]))
    for orphan in anns.orphan_entities:
        kind = parse_type_name(orphan.type_name)
        if isinstance(kind, LabeledArgType):
            if orphan.subtype and orphan.subtype != NULL:
                mark(orphan.span, labeled=(kind, orphan.subtype))
        else:
            mark(orphan.span, entity_label=inv.entity_index(kind.value))
    return examples


def sample_batch(example: SentenceExample, config: ModelConfig, inv: LabelInventory, rng) -> TrainingBatch:
    gold_keys = sorted(example.gold)
    gold_set = set(gold_keys)
    pool = [
        (c.start, c.width)
        for c in enumerate_spans(example.n_tokens, config.max_span_width)
        if (c.start, c.width) not in gold_set
    ]
    n_neg = min(config.neg_entity_samples, len(pool))
    negatives = [pool[i] for i in sorted(rng.choice(len(pool), size=n_neg, replace=False))] if n_neg else []
    spans = gold_keys + negatives
    entity = np.zeros(len(spans), dtype=np.int64)
    subtypes = {v: np.zeros(len(spans), dtype=np.int64) for v in inv.labeled_types}
    for i, key in enumerate(gold_keys):
        slot = example.gold[key]
        entity[i] = slot.get("entity", 0)
        for v in inv.labeled_types:
            subtypes[v][i] = slot.get(v, 0)

    index = {key: i for i, key in enumerate(gold_keys)}
    positives = sorted((index[a], index[b]) for a, b in example.relations)
    pos_set = set(positives)
    candidates = [
        (i, j) for i in range(len(gold_keys)) for j in range(len(gold_keys)) if i != j and (i, j) not in pos_set
    ]
    n_rel = min(config.neg_relation_samples, len(candidates))
    rel_neg = [candidates[i] for i in sorted(rng.choice(len(candidates), size=n_rel, replace=False))] if n_rel else []
    pairs = positives + rel_neg
    rel_labels = np.array([1] * len(positives) + [0] * len(rel_neg), dtype=np.int64)
    return TrainingBatch(example.sentence, spans, entity, subtypes, pairs, rel_labels, len(gold_keys))


def _check_inventory(corpus: CorpusPartition, inv: LabelInventory):
    for _, anns in corpus:
        for event in anns.events:
            for arg in event.arguments:
                if arg.arg_type is SpanOnlyArgType.METHOD and not inv.include_method:
                    raise ValueError("corpus uses Method arguments but the inventory excludes them")


def prepare_corpus(corpus: CorpusPartition, config: ModelConfig, inv: LabelInventory):
    stats = PrepStats()
    examples = []
    for doc, anns in corpus:
        examples.extend(ex for ex in prepare_document(doc, anns, config, inv, stats) if ex.n_tokens)
    if any(vars(stats).values()):
        log.info("gold spans skipped during preparation: %s", vars(stats))
    return examples, stats


def train(
    corpus: CorpusPartition,
    config: ModelConfig,
    inv: LabelInventory,
    encoder=None,
    history: list | None = None,
    dtype=np.float32,
) -> ModelParams:
    """Fit all heads (and the toy encoder) by SGD on the summed cross-entropy.

    Each epoch visits sentences in a seeded random order and draws fresh
    negative spans and negative relation pairs for every sentence.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    if config.encoder == "file" and encoder is None:
        raise ValueError("config.encoder='file' requires a FileEncoder")
    if config.encoder == "toy" and encoder is not None and not isinstance(encoder, ToyEncoder):
        raise ValueError("config.encoder='toy' is incompatible with the supplied encoder")
    _check_inventory(corpus, inv)

    examples, _ = prepare_corpus(corpus, config, inv)
    vocab = build_vocab(text for ex in examples for text in ex.sentence.texts)
    params = init_params(config, inv, vocab if config.encoder == "toy" else (), dtype=dtype)
    if config.encoder == "file":
        probe, _ = encoder.encode(examples[0].sentence)
        if probe.h.shape[1] != config.hidden_dim:
            raise ValueError(
                f"dimension mismatch: hidden_dim config={config.hidden_dim} embeddings={probe.h.shape[1]}"
            )
    else:
        encoder = ToyEncoder(params)

    rng = np.random.default_rng(config.seed)
    lr = np.asarray(config.learning_rate, dtype=dtype)
    grads = zero_grads(params)
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        total = 0.0
        for idx in order:
            batch = sample_batch(examples[idx], config, inv, rng)
            for g in grads.values():
                g.fill(0)
            value, _ = loss_and_grads(params, batch, encoder, grads)
            total += value
            for name, tensor in params.tensors.items():
                tensor -= lr * grads[name]
        mean = total / max(1, len(examples))
        if history is not None:
            history.append(mean)
        log.info("epoch %d/%d mean loss %.5f", epoch + 1, config.epochs, mean)
        if not np.isfinite(mean):
            raise FloatingPointError(f"training diverged at epoch {epoch + 1}")
    return params
