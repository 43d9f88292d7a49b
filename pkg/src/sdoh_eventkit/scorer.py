"""Slot-filling evaluation of extracted events.

Triggers match on event type plus any character overlap.  Events are
aligned one-to-one on trigger equivalence; within aligned events span-only
arguments need an exact span match and labeled arguments need only the
same type and subtype.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from .schema import AnnotationSet, Event, LabeledArg, SpanOnlyArg, Trigger, event_sort_key

TRIGGER = "Trigger"
SPAN_ONLY = "SpanOnly"
LABELED = "Labeled"


def triggers_equivalent(a: Trigger, b: Trigger) -> bool:
    return a.event_type is b.event_type and a.span.overlap(b.span) >= 1


@dataclass
class Alignment:
    pairs: list[tuple[int, int]]  # (gold index, pred index)
    unmatched_gold: list[int]
    unmatched_pred: list[int]


def align_events(gold: list[Event], pred: list[Event]) -> Alignment:
    """Greedy one-to-one alignment on trigger equivalence.

    Gold events are visited by trigger start; each takes the unmatched
    equivalent prediction with the largest overlap.  Ties go first to a
    prediction identical to the gold event, which keeps ``score(g, g)``
    perfect when same-type triggers overlap, then to the earliest start.
    """
    taken = set()
    pairs = []
    for g_idx in sorted(range(len(gold)), key=lambda i: event_sort_key(gold[i])):
        g_event = gold[g_idx]
        g = g_event.trigger
        best, best_key = None, None
        for p_idx, p_event in enumerate(pred):
            if p_idx in taken or not triggers_equivalent(g, p_event.trigger):
                continue
            p = p_event.trigger
            key = (-g.span.overlap(p.span), p_event != g_event, p.span.start, p_idx)
            if best_key is None or key < best_key:
                best, best_key = p_idx, key
        if best is not None:
            taken.add(best)
            pairs.append((g_idx, best))
    matched_gold = {g for g, _ in pairs}
    return Alignment(
        pairs,
        [i for i in range(len(gold)) if i not in matched_gold],
        [i for i in range(len(pred)) if i not in taken],
    )


class MatchCounts:
    """tp/fp/fn per phenomenon key; merges by addition."""

    def __init__(self, counts: dict | None = None):
        self.counts: dict[tuple, list[int]] = {}
        for key, value in (counts or {}).items():
            self.counts[key] = list(value)

    def add(self, key: tuple, tp: int = 0, fp: int = 0, fn: int = 0):
        slot = self.counts.setdefault(key, [0, 0, 0])
        slot[0] += tp
        slot[1] += fp
        slot[2] += fn

    def __iadd__(self, other: "MatchCounts"):
        for key, (tp, fp, fn) in other.counts.items():
            self.add(key, tp, fp, fn)
        return self

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        out = MatchCounts(self.counts)
        out += other
        return out

    def __eq__(self, other):
        return isinstance(other, MatchCounts) and self.counts == other.counts

    def overall(self) -> tuple[int, int, int]:
        tp = sum(v[0] for v in self.counts.values())
        fp = sum(v[1] for v in self.counts.values())
        fn = sum(v[2] for v in self.counts.values())
        return tp, fp, fn

    def total(self, kind: str) -> tuple[int, int, int]:
        rows = [v for k, v in self.counts.items() if k[0] == kind]
        return tuple(sum(r[i] for r in rows) for i in range(3))


def _argument_keys(event: Event) -> tuple[Counter, Counter]:
    span_only = Counter((a.arg_type, a.span) for a in event.arguments if isinstance(a, SpanOnlyArg))
    labeled = Counter((a.arg_type, a.subtype) for a in event.arguments if isinstance(a, LabeledArg))
    return span_only, labeled


def _count_side(counts: MatchCounts, event: Event, span_only: Counter, labeled: Counter, side: str):
    et = event.event_type.value
    for (arg_type, _), n in span_only.items():
        counts.add((SPAN_ONLY, et, arg_type.value), **{side: n})
    for (arg_type, subtype), n in labeled.items():
        counts.add((LABELED, et, arg_type.value, subtype), **{side: n})


def score_events(gold: list[Event], pred: list[Event], alignment: Alignment | None = None) -> MatchCounts:
    counts = MatchCounts()
    alignment = alignment or align_events(gold, pred)
    for g_idx, p_idx in alignment.pairs:
        g, p = gold[g_idx], pred[p_idx]
        et = g.event_type.value
        counts.add((TRIGGER, et), tp=1)
        g_so, g_lab = _argument_keys(g)
        p_so, p_lab = _argument_keys(p)
        for key in g_so | p_so:
            tp = min(g_so[key], p_so[key])
            counts.add((SPAN_ONLY, et, key[0].value), tp=tp, fp=p_so[key] - tp, fn=g_so[key] - tp)
        for key in g_lab | p_lab:
            tp = min(g_lab[key], p_lab[key])
            counts.add((LABELED, et, key[0].value, key[1]), tp=tp, fp=p_lab[key] - tp, fn=g_lab[key] - tp)
    for g_idx in alignment.unmatched_gold:
        event = gold[g_idx]
        counts.add((TRIGGER, event.event_type.value), fn=1)
        _count_side(counts, event, *_argument_keys(event), "fn")
    for p_idx in alignment.unmatched_pred:
        event = pred[p_idx]
        counts.add((TRIGGER, event.event_type.value), fp=1)
        _count_side(counts, event, *_argument_keys(event), "fp")
    return counts


def _as_mapping(sets) -> dict[str, AnnotationSet]:
    if isinstance(sets, dict):
        return sets
    return {s.document_id: s for s in sets}


def score_documents(gold_sets, pred_sets, inv=None, alignments: dict | None = None) -> MatchCounts:
    """Sum per-document counts; gold and predictions must cover the same ids.

    ``alignments``, when given, receives the per-document :class:`Alignment`.
    """
    gold_map, pred_map = _as_mapping(gold_sets), _as_mapping(pred_sets)
    unknown = sorted(set(pred_map) - set(gold_map))
    if unknown:
        raise KeyError(f"unknown document id in predictions: {unknown[0]}")
    missing = sorted(set(gold_map) - set(pred_map))
    if missing:
        raise KeyError(f"unknown document id in gold (no prediction): {missing[0]}")
    total = MatchCounts()
    for doc_id in sorted(gold_map):
        gold, pred = list(gold_map[doc_id].events), list(pred_map[doc_id].events)
        alignment = align_events(gold, pred)
        if alignments is not None:
            alignments[doc_id] = alignment
        total += score_events(gold, pred, alignment)
    return total


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    empty: bool = False

    @property
    def gold_count(self) -> int:
        return self.tp + self.fn

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "gold": self.gold_count,
            "empty": self.empty,
        }


def prf(tp: int, fp: int, fn: int) -> Metrics:
    """Precision/recall/F1 with 0/0 conventions.

    All-zero counts report 1.0 flagged ``empty``; otherwise an undefined
    precision or recall is 0.0.
    """
    if tp == fp == fn == 0:
        return Metrics(1.0, 1.0, 1.0, 0, 0, 0, empty=True)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return Metrics(p, r, f, tp, fp, fn)


def _key_name(key: tuple) -> str:
    return "/".join(key)


@dataclass
class ScoreReport:
    per_key: dict[tuple, Metrics]
    overall: Metrics
    by_kind: dict[str, Metrics]
    subtype_table: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "by_kind": {k: m.to_dict() for k, m in self.by_kind.items()},
            "per_key": {_key_name(k): m.to_dict() for k, m in sorted(self.per_key.items())},
            "subtype_breakdown": self.subtype_table,
            "reference": {
                "note": "published full-scale reference, not comparable to synthetic runs",
                "overall_f1_shac_uw_test": 0.86,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("phenomenon", "gold", "tp", "fp", "fn", "P", "R", "F1")]
        for key, m in sorted(self.per_key.items()):
            rows.append((_key_name(key), m.gold_count, m.tp, m.fp, m.fn, f"{m.precision:.3f}", f"{m.recall:.3f}", f"{m.f1:.3f}"))
        for kind, m in self.by_kind.items():
            rows.append((f"[{kind}]", m.gold_count, m.tp, m.fp, m.fn, f"{m.precision:.3f}", f"{m.recall:.3f}", f"{m.f1:.3f}"))
        m = self.overall
        rows.append(("OVERALL (micro)", m.gold_count, m.tp, m.fp, m.fn, f"{m.precision:.3f}", f"{m.recall:.3f}", f"{m.f1:.3f}"))
        return format_table(rows)


def format_table(rows) -> str:
    rows = [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for n, row in enumerate(rows):
        cells = [c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report(counts: MatchCounts) -> ScoreReport:
    per_key = {key: prf(*value) for key, value in counts.counts.items()}
    by_kind = {kind: prf(*counts.total(kind)) for kind in (TRIGGER, SPAN_ONLY, LABELED)}
    table = [
        {
            "event_type": key[1],
            "argument": key[2],
            "subtype": key[3],
            "f1": m.f1,
            "gold_events": m.gold_count,
        }
        for key, m in sorted(per_key.items())
        if key[0] == LABELED
    ]
    return ScoreReport(per_key, prf(*counts.overall()), by_kind, table)


def alignment_debug(gold_sets, pred_sets, alignments: dict) -> dict:
    """Per-document listing of matched and unmatched events for error analysis."""
    gold_map, pred_map = _as_mapping(gold_sets), _as_mapping(pred_sets)

    def brief(event: Event) -> dict:
        return {
            "type": event.event_type.value,
            "trigger": [event.trigger.span.start, event.trigger.span.end],
            "arguments": [
                [a.arg_type.value, getattr(a, "subtype", None), a.span.start, a.span.end] for a in event.arguments
            ],
        }

    out = {}
    for doc_id, al in sorted(alignments.items()):
        gold, pred = gold_map[doc_id].events, pred_map[doc_id].events
        out[doc_id] = {
            "matched": [{"gold": brief(gold[g]), "pred": brief(pred[p])} for g, p in al.pairs],
            "unmatched_gold": [brief(gold[g]) for g in al.unmatched_gold],
            "unmatched_pred": [brief(pred[p]) for p in al.unmatched_pred],
        }
    return out
