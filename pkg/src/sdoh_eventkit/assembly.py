"""Turn raw head outputs into schema events."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus_io import Document, tokenize
from .schema import (
    NULL,
    AnnotationSet,
    Event,
    EventType,
    LabeledArg,
    LabeledArgType,
    LabelInventory,
    Span,
    SpanOnlyArg,
    SpanOnlyArgType,
    Trigger,
    argument_allowed,
    event_sort_key,
)

log = logging.getLogger(__name__)


@dataclass
class DecodedEntities:
    triggers: list[Trigger] = field(default_factory=list)
    span_only: list[tuple[SpanOnlyArgType, Span]] = field(default_factory=list)
    labeled: list[tuple[LabeledArgType, str, Span]] = field(default_factory=list)

    def __bool__(self):
        return bool(self.triggers or self.span_only or self.labeled)


def _char_span(candidate, tokens) -> Span:
    if candidate.char_span is not None:
        return candidate.char_span
    return Span(tokens[candidate.start].span.start, tokens[candidate.end - 1].span.end)


def decode(raw, tokens, inv: LabelInventory) -> DecodedEntities:
    """Argmax per head; ties resolve to the null label at index 0.

    ``tokens`` are the sentence's tokens (with character spans), used to map
    candidates back to character offsets.
    """
    out = DecodedEntities()
    if not raw.candidates:
        return out
    labels = inv.entity_labels
    event_names = {e.value for e in EventType}
    entity_best = raw.entity_logits.argmax(axis=1)
    subtype_best = {v: logits.argmax(axis=1) for v, logits in raw.subtype_logits.items()}
    for i, cand in enumerate(raw.candidates):
        span = _char_span(cand, tokens)
        label = labels[entity_best[i]]
        if label in event_names:
            out.triggers.append(Trigger(EventType(label), span))
        elif label != NULL:
            out.span_only.append((SpanOnlyArgType(label), span))
        for v in inv.labeled_types:
            sub = inv.subtype_labels[v][subtype_best[v][i]]
            if sub != NULL:
                out.labeled.append((v, sub, span))
    return out


def decode_relations(raw, tokens) -> list[tuple[Span, Span]]:
    """Character-span (head, tail) pairs whose relation argmax is ``has``."""
    if not raw.pairs:
        return []
    best = np.asarray(raw.relation_logits).argmax(axis=1)
    return [
        (_char_span(raw.candidates[i], tokens), _char_span(raw.candidates[j], tokens))
        for (i, j), label in zip(raw.pairs, best)
        if label == 1
    ]


def _arg_key(arg):
    return (arg.span.start, arg.span.end, arg.arg_type.value, getattr(arg, "subtype", ""))


def assemble_events(
    decoded: DecodedEntities,
    relations,
    inv: LabelInventory,
    stats: Counter | None = None,
) -> list[Event]:
    """Attach related arguments to triggers; one event per decoded trigger.

    Incompatible attachments are dropped (``stats["dropped_incompatible"]``).
    When several arguments of one labeled type attach to a trigger, the one
    starting latest is kept (``stats["labeled_conflicts"]``).  Arguments
    without a ``has`` edge are discarded.
    """
    stats = stats if stats is not None else Counter()
    args_at: dict[Span, list] = {}
    for arg_type, span in decoded.span_only:
        args_at.setdefault(span, []).append(SpanOnlyArg(arg_type, span))
    for arg_type, subtype, span in decoded.labeled:
        args_at.setdefault(span, []).append(LabeledArg(arg_type, subtype, span))

    attached: dict[int, dict] = {i: {} for i in range(len(decoded.triggers))}
    by_span: dict[Span, list[int]] = {}
    for i, trig in enumerate(decoded.triggers):
        by_span.setdefault(trig.span, []).append(i)

    for head, tail in relations:
        for t_idx in by_span.get(head, ()):
            event_type = decoded.triggers[t_idx].event_type
            for arg in args_at.get(tail, ()):
                if not argument_allowed(event_type, arg, inv):
                    stats["dropped_incompatible"] += 1
                    continue
                attached[t_idx][_arg_key(arg)] = arg

    events = []
    for i, trig in enumerate(decoded.triggers):
        args = sorted(attached[i].values(), key=_arg_key)
        kept, latest = [], {}
        for arg in args:
            if isinstance(arg, LabeledArg):
                if arg.arg_type in latest:
                    stats["labeled_conflicts"] += 1
                latest[arg.arg_type] = arg
            else:
                kept.append(arg)
        kept.extend(latest.values())
        event = Event(trig, tuple(sorted(kept, key=_arg_key)))
        if event.incomplete:
            stats["incomplete"] += 1
        events.append(event)
    events.sort(key=event_sort_key)
    return events


def decoded_from_events(events) -> tuple[DecodedEntities, list[tuple[Span, Span]]]:
    """Inverse view of a gold event list: its entities plus identity relations."""
    decoded = DecodedEntities()
    relations = []
    seen_span_only, seen_labeled = set(), set()
    for event in events:
        if event.trigger not in decoded.triggers:
            decoded.triggers.append(event.trigger)
        for arg in event.arguments:
            if isinstance(arg, LabeledArg):
                key = (arg.arg_type, arg.subtype, arg.span)
                if key not in seen_labeled:
                    seen_labeled.add(key)
                    decoded.labeled.append(key)
            else:
                key = (arg.arg_type, arg.span)
                if key not in seen_span_only:
                    seen_span_only.add(key)
                    decoded.span_only.append(key)
            relations.append((event.trigger.span, arg.span))
    return decoded, relations


def extract_events(doc: Document, params, encoder=None, stats: Counter | None = None) -> AnnotationSet:
    """Run the model over every sentence of a document's social-history section."""
    from .model.network import forward
    from .model.training import sentences_of

    inv = params.inventory
    tokenized = tokenize(doc.section_text, doc.id)
    events = []
    for sentence in sentences_of(doc, tokenized):
        lo, hi = tokenized.sentences[sentence.index]
        tokens = tokenized.tokens[lo:hi]
        raw = forward(sentence, params, params.config, inv, encoder)
        decoded = decode(raw, tokens, inv)
        if not decoded.triggers:
            continue
        events.extend(assemble_events(decoded, decode_relations(raw, tokens), inv, stats))
    events.sort(key=event_sort_key)
    return AnnotationSet(doc.id, tuple(events))


def events_to_json(doc: Document, anns: AnnotationSet) -> dict:
    def span_obj(span):
        return {"start": span.start, "end": span.end, "text": doc.span_text(span)}

    events = []
    for event in anns.events:
        args = []
        for arg in event.arguments:
            entry = {"type": arg.arg_type.value, **span_obj(arg.span)}
            if isinstance(arg, LabeledArg):
                entry["subtype"] = arg.subtype
            args.append(entry)
        events.append(
            {
                "type": event.event_type.value,
                "trigger": span_obj(event.trigger.span),
                "arguments": args,
                "incomplete": event.incomplete,
            }
        )
    return {"document_id": anns.document_id, "events": events}


def events_from_json(data: dict) -> AnnotationSet:
    events = []
    for entry in data["events"]:
        trig = entry["trigger"]
        args = []
        for a in entry["arguments"]:
            span = Span(a["start"], a["end"])
            if "subtype" in a:
                args.append(LabeledArg(LabeledArgType(a["type"]), a["subtype"], span))
            else:
                args.append(SpanOnlyArg(SpanOnlyArgType(a["type"]), span))
        events.append(Event(Trigger(EventType(entry["type"]), Span(trig["start"], trig["end"])), tuple(args)))
    return AnnotationSet(data["document_id"], tuple(events))
