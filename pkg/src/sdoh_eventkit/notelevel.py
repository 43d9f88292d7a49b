"""Note-level multi-class labels derived from events, and their metrics.

Each document gets one value per SDOH field.  ``unknown`` is the negative
class: precision and recall only count positive (non-unknown) labels, and a
positive prediction that disagrees with a positive gold label is both a
false positive and a false negative.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .schema import SUBTYPE_LABELS, NULL, EventType, LabeledArgType
from .scorer import Metrics, format_table, prf

UNKNOWN = "unknown"

FIELD_SOURCES: dict[str, tuple[EventType, LabeledArgType]] = {
    "alcohol": (EventType.ALCOHOL, LabeledArgType.STATUS_TIME),
    "drug": (EventType.DRUG, LabeledArgType.STATUS_TIME),
    "tobacco": (EventType.TOBACCO, LabeledArgType.STATUS_TIME),
    "employment": (EventType.EMPLOYMENT, LabeledArgType.STATUS_EMPLOY),
    "living": (EventType.LIVING_STATUS, LabeledArgType.TYPE_LIVING),
}
FIELD_VALUES: dict[str, tuple[str, ...]] = {
    name: (UNKNOWN,) + tuple(s for s in SUBTYPE_LABELS[arg] if s != NULL) for name, (_, arg) in FIELD_SOURCES.items()
}
CSV_COLUMNS = ("document_id",) + tuple(FIELD_SOURCES)


@dataclass(frozen=True)
class NoteLabelSet:
    alcohol: str = UNKNOWN
    drug: str = UNKNOWN
    tobacco: str = UNKNOWN
    employment: str = UNKNOWN
    living: str = UNKNOWN

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value not in FIELD_VALUES[f.name]:
                raise ValueError(f"{f.name}: invalid label {value!r}")

    def as_dict(self) -> dict[str, str]:
        return asdict(self)


def events_to_note_labels(events) -> NoteLabelSet:
    """Per field, the subtype of the relevant event whose trigger starts last.

    Among arguments of the same trigger start, the later-ending trigger and
    then the later argument start win, so the result never depends on the
    order of ``events``.
    """
    best: dict[str, tuple] = {}
    for event in events:
        for name, (event_type, arg_type) in FIELD_SOURCES.items():
            if event.event_type is not event_type:
                continue
            for arg in event.labeled(arg_type):
                key = (event.trigger.span.start, event.trigger.span.end, arg.span.start, arg.span.end, arg.subtype)
                if name not in best or key > best[name]:
                    best[name] = key
    return NoteLabelSet(**{name: key[-1] for name, key in best.items()})


@dataclass(frozen=True)
class FieldMetrics:
    accuracy: float
    metrics: Metrics
    n: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "n": self.n, **self.metrics.to_dict()}


@dataclass(frozen=True)
class NoteMetrics:
    per_field: dict[str, FieldMetrics]
    macro_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "fields": {name: fm.to_dict() for name, fm in self.per_field.items()},
            "macro": {
                "accuracy": self.macro_accuracy,
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
            "negative_label": UNKNOWN,
            "reference": {
                "note": "published full-scale reference, not comparable to synthetic runs",
                "note_level_f1_range": [0.77, 0.86],
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [("field", "n", "accuracy", "P", "R", "F1")]
        for name, fm in self.per_field.items():
            m = fm.metrics
            rows.append((name, fm.n, f"{fm.accuracy:.3f}", f"{m.precision:.3f}", f"{m.recall:.3f}", f"{m.f1:.3f}"))
        rows.append(
            (
                "macro",
                "",
                f"{self.macro_accuracy:.3f}",
                f"{self.macro_precision:.3f}",
                f"{self.macro_recall:.3f}",
                f"{self.macro_f1:.3f}",
            )
        )
        return format_table(rows)


def field_counts(gold: list[str], pred: list[str]) -> tuple[int, int, int, int]:
    """(correct, tp, fp, fn) for one field with ``unknown`` as negative."""
    correct = tp = fp = fn = 0
    for g, p in zip(gold, pred):
        correct += g == p
        if p != UNKNOWN and p == g:
            tp += 1
            continue
        if p != UNKNOWN:
            fp += 1
        if g != UNKNOWN:
            fn += 1
    return correct, tp, fp, fn


def note_metrics(gold: list[NoteLabelSet], pred: list[NoteLabelSet]) -> NoteMetrics:
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted label sets")
    per_field = {}
    for name in FIELD_SOURCES:
        g = [getattr(x, name) for x in gold]
        p = [getattr(x, name) for x in pred]
        correct, tp, fp, fn = field_counts(g, p)
        accuracy = correct / len(g) if g else 1.0
        per_field[name] = FieldMetrics(accuracy, prf(tp, fp, fn), len(g))
    k = len(per_field)
    return NoteMetrics(
        per_field,
        sum(fm.accuracy for fm in per_field.values()) / k,
        sum(fm.metrics.precision for fm in per_field.values()) / k,
        sum(fm.metrics.recall for fm in per_field.values()) / k,
        sum(fm.metrics.f1 for fm in per_field.values()) / k,
    )


def write_label_csv(path: str | Path, labels: dict[str, NoteLabelSet]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for doc_id in sorted(labels):
            row = labels[doc_id].as_dict()
            writer.writerow([doc_id] + [row[name] for name in FIELD_SOURCES])


def read_label_csv(path: str | Path) -> dict[str, NoteLabelSet]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            doc_id = row.pop("document_id")
            if doc_id in out:
                raise ValueError(f"{path}: row {lineno}: duplicate document id {doc_id}")
            try:
                out[doc_id] = NoteLabelSet(**row)
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return out


def paired(gold: dict[str, NoteLabelSet], pred: dict[str, NoteLabelSet]):
    """Align two label maps by document id; both must cover the same ids."""
    if set(gold) != set(pred):
        diff = sorted(set(gold) ^ set(pred))
        raise KeyError(f"unknown document id: {diff[0]}")
    ids = sorted(gold)
    return [gold[i] for i in ids], [pred[i] for i in ids]
