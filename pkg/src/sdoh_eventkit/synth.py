"""Template-grammar generator for gold-annotated synthetic corpora.

Each event is realized as one sentence from a per-(event type, subtype)
template whose slots are filled from word lists.  Slot positions are
tracked during expansion so the gold annotations are exact by
construction.
"""

from __future__ import annotations

import csv
import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .corpus_io import NOTE_TYPES, CorpusPartition, Document
from .schema import (
    REQUIRED_LABELED,
    AnnotationSet,
    Event,
    EventType,
    LabeledArg,
    Span,
    SpanOnlyArg,
    SpanOnlyArgType,
    Trigger,
    event_sort_key,
)

_SLOT = re.compile(r"\{(\w+)\}")


class GrammarError(ValueError):
    pass


@dataclass
class SynthGrammar:
    raw: dict
    seed: int = 7

    def __post_init__(self):
        templates = self.raw.get("templates") or {}
        if not templates or not any(any(v for v in t.values()) for t in templates.values()):
            raise GrammarError("grammar has no templates")
        for name in templates:
            EventType(name)
        weights = self.raw.get("event_weights") or {name: 1.0 for name in templates}
        self.event_weights = {EventType(k): float(v) for k, v in weights.items() if k in templates}
        self.subtype_weights = {
            EventType(k): {s: float(w) for s, w in v.items()} for k, v in self.raw.get("subtype_weights", {}).items()
        }
        for event_type in self.event_weights:
            if event_type not in self.subtype_weights:
                subtypes = templates[event_type.value]
                self.subtype_weights[event_type] = {s: 1.0 for s in subtypes}

    @property
    def templates(self) -> dict:
        return self.raw["templates"]

    @property
    def fillers(self) -> dict:
        return self.raw.get("fillers", {})


def load_grammar(path: str | Path) -> SynthGrammar:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return SynthGrammar(raw, int(raw.get("seed", 7)))


def default_grammar() -> SynthGrammar:
    raw = json.loads(resources.files("sdoh_eventkit.data").joinpath("grammar.json").read_text(encoding="utf-8"))
    return SynthGrammar(raw, int(raw.get("seed", 7)))


def _weighted(rng: random.Random, weights: dict):
    keys = list(weights)
    return rng.choices(keys, weights=[weights[k] for k in keys], k=1)[0]


def _filler(grammar: SynthGrammar, slot: str, event_type: EventType, subtype: str, rng: random.Random) -> str:
    fillers = grammar.fillers
    if slot == "trigger":
        options = fillers.get("trigger", {}).get(event_type.value) or [event_type.value]
    elif slot == "status":
        labeled = REQUIRED_LABELED[event_type].value
        options = fillers.get("status", {}).get(labeled, {}).get(subtype) or [subtype]
    else:
        options = fillers.get(slot, {}).get(event_type.value)
        if not options:
            raise GrammarError(f"no fillers for slot {slot!r} of {event_type.value}")
    return rng.choice(options)


def expand_template(
    grammar: SynthGrammar,
    template: str,
    event_type: EventType,
    subtype: str,
    rng: random.Random,
) -> tuple[str, Event]:
    """Fill a template and return the sentence plus its sentence-relative gold event."""
    pieces, slots, pos, cursor = [], [], 0, 0
    for m in _SLOT.finditer(template):
        literal = template[cursor:m.start()]
        pieces.append(literal)
        pos += len(literal)
        value = _filler(grammar, m.group(1), event_type, subtype, rng)
        slots.append((m.group(1), Span(pos, pos + len(value))))
        pieces.append(value)
        pos += len(value)
        cursor = m.end()
    pieces.append(template[cursor:])
    text = "".join(pieces)
    text = text[:1].upper() + text[1:]

    trigger = None
    args = []
    for slot, span in slots:
        if slot == "trigger":
            trigger = Trigger(event_type, span)
        elif slot == "status":
            args.append(LabeledArg(REQUIRED_LABELED[event_type], subtype, span))
        else:
            args.append(SpanOnlyArg(SpanOnlyArgType(slot), span))
    if trigger is None:
        raise GrammarError(f"template without trigger slot: {template!r}")
    return text, Event(trigger, tuple(args))


def _shift(event: Event, offset: int) -> Event:
    def mv(span):
        return Span(span.start + offset, span.end + offset)

    args = tuple(
        LabeledArg(a.arg_type, a.subtype, mv(a.span)) if isinstance(a, LabeledArg) else SpanOnlyArg(a.arg_type, mv(a.span))
        for a in event.arguments
    )
    return Event(Trigger(event.trigger.event_type, mv(event.trigger.span)), args)


def _timestamp(rng: random.Random, year: int) -> str:
    month = rng.randint(1, 12)
    day = rng.randint(1, 28)
    return f"{year:04d}-{month:02d}-{day:02d}T{rng.randint(7, 19):02d}:{rng.choice((0, 15, 30, 45)):02d}:00"


def generate_document(grammar: SynthGrammar, doc_id: str, rng: random.Random, n_patients: int, year: int = 2021):
    raw = grammar.raw
    lo, hi = raw.get("events_per_doc", [1, 4])
    k = min(rng.randint(lo, hi), len(grammar.event_weights))
    remaining = dict(grammar.event_weights)
    sentences: list[tuple[str, Event | None]] = []
    for _ in range(k):
        event_type = _weighted(rng, remaining)
        del remaining[event_type]
        subtype = _weighted(rng, grammar.subtype_weights[event_type])
        options = grammar.templates[event_type.value].get(subtype)
        if not options:
            raise GrammarError(f"no templates for {event_type.value}/{subtype}")
        sentences.append(expand_template(grammar, rng.choice(options), event_type, subtype, rng))
    distractors = raw.get("distractors", [])
    if distractors and rng.random() < raw.get("distractor_rate", 0.0):
        sentences.insert(rng.randint(0, len(sentences)), (rng.choice(distractors), None))

    joiner = rng.choice(("\n", " "))
    parts, events, pos = [], [], 0
    for i, (sentence, event) in enumerate(sentences):
        if i:
            parts.append(joiner)
            pos += len(joiner)
        if event is not None:
            events.append(_shift(event, pos))
        parts.append(sentence)
        pos += len(sentence)
    section = "".join(parts)

    note_type = rng.choice(NOTE_TYPES)
    if note_type == "social_history":
        full_text, offset = section, 0
    else:
        other = raw.get("other_sections", {})
        before = [f"{name}: {rng.choice(opts)}\n" for name, opts in other.items() if name != "MEDICATIONS"]
        header = rng.choice(raw.get("headers", ["SOCIAL HISTORY"]))
        head = "".join(before) + header + ":" + rng.choice(("\n", " "))
        tail = ""
        if "MEDICATIONS" in other:
            tail = "\nMEDICATIONS: " + rng.choice(other["MEDICATIONS"]) + "\n"
        full_text = head + section + tail
        offset = len(head)
    specialties = raw.get("specialties") or [""]
    doc = Document(
        doc_id,
        full_text,
        section,
        offset,
        patient_id=f"P{rng.randrange(n_patients):05d}",
        timestamp=_timestamp(rng, year),
        note_type=note_type,
        specialty=rng.choice(specialties) if note_type == "progress" else "",
    )
    events.sort(key=event_sort_key)
    return doc, AnnotationSet(doc_id, tuple(events))


def generate_corpus(
    grammar: SynthGrammar,
    n_docs: int,
    seed: int | None = None,
    name: str = "train",
    id_prefix: str = "doc",
    start_index: int = 0,
    n_patients: int | None = None,
    year: int = 2021,
) -> CorpusPartition:
    if n_docs < 0:
        raise ValueError("n_docs must be non-negative")
    rng = random.Random(grammar.seed if seed is None else seed)
    n_patients = n_patients or max(1, (2 * n_docs) // 3)
    items = [
        generate_document(grammar, f"{id_prefix}{start_index + i:05d}", rng, n_patients, year)
        for i in range(n_docs)
    ]
    return CorpusPartition(name, items)


# --- structured tables -------------------------------------------------------

_SUBSTANCE_COLUMN = {EventType.ALCOHOL: "alcohol_use", EventType.TOBACCO: "tobacco_use", EventType.DRUG: "drug_use"}


def _gold_facts(items) -> dict[str, dict]:
    facts: dict[str, dict] = {}
    for doc, anns in items:
        slot = facts.setdefault(doc.patient_id, {"current": set(), "employment": None, "homeless": False})
        for event in anns.events:
            for arg in event.arguments:
                if not isinstance(arg, LabeledArg):
                    continue
                if event.event_type in _SUBSTANCE_COLUMN and arg.subtype == "current":
                    slot["current"].add(event.event_type)
                elif event.event_type is EventType.EMPLOYMENT:
                    slot["employment"] = arg.subtype
                elif event.event_type is EventType.LIVING_STATUS and arg.subtype == "homeless":
                    slot["homeless"] = True
    return facts


def generate_structured_tables(items, seed: int = 0, year: int = 2021, capture: float = 0.7, noise: float = 0.05):
    """Noisy structured-table rows for the patients of a synthetic corpus.

    Each gold fact is recorded in a table with probability ``capture``;
    ``noise`` adds spurious positives.  A few rows fall outside ``year`` and
    some employment-status rows belong to patients never seen that year, so
    downstream filters have something to do.  Returns ``{table: rows}``.
    """
    rng = random.Random(seed)
    facts = _gold_facts(items)
    patients = sorted(facts)
    tables = {name: [] for name in ("flowsheet", "social_history_table", "employment_status", "occupation", "visits")}

    def stamp(y=year):
        return _timestamp(rng, y)[:10]

    for pid in patients:
        fact = facts[pid]
        visit_year = year if rng.random() < 0.9 else year - 1
        tables["visits"].append({"patient_id": pid, "visit_date": stamp(visit_year)})
        if rng.random() < 0.8:
            row = {"patient_id": pid, "timestamp": stamp(year if rng.random() < 0.9 else year - 1)}
            for et, column in _SUBSTANCE_COLUMN.items():
                hit = et in fact["current"] and rng.random() < capture
                row[column] = "true" if hit or rng.random() < noise else "false"
            tables["social_history_table"].append(row)
        if fact["employment"] and rng.random() < capture:
            tables["employment_status"].append({"patient_id": pid, "status": fact["employment"]})
            if rng.random() < 0.5:
                tables["occupation"].append({"patient_id": pid, "title": rng.choice(("teacher", "driver", "clerk")), "timestamp": stamp()})
        if fact["homeless"] and rng.random() < capture / 2:
            tables["flowsheet"].append({"patient_id": pid, "field": "housing_status", "value": "homeless", "timestamp": stamp()})
        elif rng.random() < 0.3:
            tables["flowsheet"].append({"patient_id": pid, "field": "housing_status", "value": "stable housing", "timestamp": stamp()})
        if EventType.TOBACCO in fact["current"] and rng.random() < capture / 2:
            tables["flowsheet"].append(
                {"patient_id": pid, "field": "tobacco_smoking_status", "value": "current every day smoker", "timestamp": stamp()}
            )
    for i in range(max(1, len(patients) // 10)):
        pid = f"X{i:05d}"
        tables["employment_status"].append({"patient_id": pid, "status": "employed"})
        tables["visits"].append({"patient_id": pid, "visit_date": stamp(year - 1)})
    return tables


def write_structured_tables(table_dir: str | Path, tables: dict) -> None:
    from .casestudy import TABLE_COLUMNS

    table_dir = Path(table_dir)
    table_dir.mkdir(parents=True, exist_ok=True)
    for name, rows in tables.items():
        with open(table_dir / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS[name], lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
