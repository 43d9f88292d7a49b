"""Patient-level comparison of structured EHR fields with extracted events.

A patient counts as positive for an indicator if any record or any note in
the study year says so, regardless of later changes.  Positives from the two
sources are split into only-structured, only-extracted and both, with
proportions taken over the union of positive patients.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path

from .corpus_io import Document
from .schema import AnnotationSet, EventType, LabeledArgType, SpanOnlyArgType
from .scorer import format_table

log = logging.getLogger(__name__)

SOURCES = ("flowsheet", "social_history_table", "employment_status", "occupation")
SDOH_INDICATORS = ("alcohol_current", "tobacco_current", "drug_current", "employment_any", "homeless_current")
STRUCTURED, EXTRACTED = "structured", "extracted"

TABLE_COLUMNS = {
    "flowsheet": ("patient_id", "field", "value", "timestamp"),
    "social_history_table": ("patient_id", "alcohol_use", "tobacco_use", "drug_use", "timestamp"),
    "employment_status": ("patient_id", "status"),
    "occupation": ("patient_id", "title", "timestamp"),
    "visits": ("patient_id", "visit_date"),
}
_BOOL_FIELDS = ("alcohol_use", "tobacco_use", "drug_use")

UNION_NOTE = "proportions are over the union of patients positive in either source"


class IngestError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class StructuredRecord:
    patient_id: str
    source: str
    field: str
    value: str | bool
    timestamp: datetime | None = None

    def __post_init__(self):
        if not self.patient_id:
            raise ValueError("patient_id must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"unknown structured source {self.source!r}")


@dataclass(frozen=True, order=True)
class PatientIndicator:
    patient_id: str
    sdoh: str
    source: str


def parse_timestamp(text: str) -> datetime:
    return datetime.fromisoformat(text.strip())


def _read_table(path: Path, name: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns = tuple(reader.fieldnames or ())
        expected = TABLE_COLUMNS[name]
        if columns != expected:
            raise IngestError(f"{path.name}: expected columns {','.join(expected)}, found {','.join(columns)}")
        # data rows start on line 2; the header is row 1
        for row_no, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise IngestError(f"{path.name}: row {row_no}: wrong number of fields")
            if not row["patient_id"].strip():
                raise IngestError(f"{path.name}: row {row_no}: empty patient_id")
            yield row_no, row


def _timestamp(path: Path, row_no: int, text: str) -> datetime:
    try:
        return parse_timestamp(text)
    except ValueError:
        raise IngestError(f"{path.name}: row {row_no}: unparseable timestamp") from None


def _boolean(path: Path, row_no: int, column: str, text: str) -> bool:
    value = text.strip().lower()
    if value not in ("true", "false"):
        raise IngestError(f"{path.name}: row {row_no}: {column} must be true or false")
    return value == "true"


def read_visits(path: str | Path) -> dict[str, list[datetime]]:
    path = Path(path)
    visits: dict[str, list[datetime]] = defaultdict(list)
    for row_no, row in _read_table(path, "visits"):
        visits[row["patient_id"].strip()].append(_timestamp(path, row_no, row["visit_date"]))
    return dict(visits)


def ingest_structured(table_dir: str | Path, year: int) -> list[StructuredRecord]:
    """Read whichever of the structured CSV tables exist in ``table_dir``.

    Employment-status rows carry no timestamp, so they are kept only for
    patients with a completed visit in ``year`` (from ``visits.csv``).
    """
    table_dir = Path(table_dir)
    records: list[StructuredRecord] = []

    path = table_dir / "flowsheet.csv"
    if path.exists():
        for row_no, row in _read_table(path, "flowsheet"):
            records.append(
                StructuredRecord(
                    row["patient_id"].strip(),
                    "flowsheet",
                    row["field"].strip(),
                    row["value"].strip(),
                    _timestamp(path, row_no, row["timestamp"]),
                )
            )

    path = table_dir / "social_history_table.csv"
    if path.exists():
        for row_no, row in _read_table(path, "social_history_table"):
            ts = _timestamp(path, row_no, row["timestamp"])
            for column in _BOOL_FIELDS:
                value = _boolean(path, row_no, column, row[column])
                records.append(StructuredRecord(row["patient_id"].strip(), "social_history_table", column, value, ts))

    path = table_dir / "occupation.csv"
    if path.exists():
        for row_no, row in _read_table(path, "occupation"):
            records.append(
                StructuredRecord(
                    row["patient_id"].strip(),
                    "occupation",
                    "title",
                    row["title"].strip(),
                    _timestamp(path, row_no, row["timestamp"]),
                )
            )

    path = table_dir / "employment_status.csv"
    if path.exists():
        visits_path = table_dir / "visits.csv"
        visits = read_visits(visits_path) if visits_path.exists() else {}
        visited = {pid for pid, dates in visits.items() if any(d.year == year for d in dates)}
        dropped = 0
        for _, row in _read_table(path, "employment_status"):
            pid = row["patient_id"].strip()
            if pid not in visited:
                dropped += 1
                continue
            records.append(StructuredRecord(pid, "employment_status", "status", row["status"].strip()))
        if dropped:
            log.info("employment_status: %d rows dropped (no completed visit in %d)", dropped, year)
    return records


# --- field mapping -----------------------------------------------------------


@dataclass(frozen=True)
class MappingRule:
    source: str
    field: str
    sdoh: str
    positive: dict

    def __post_init__(self):
        if self.sdoh not in SDOH_INDICATORS:
            raise ValueError(f"unknown sdoh indicator {self.sdoh!r}")
        kinds = set(self.positive) - {"is_true", "in", "not_in", "regex"}
        if kinds or len(self.positive) != 1:
            raise ValueError(f"positive predicate must be exactly one of is_true/in/not_in/regex: {self.positive}")
        if "regex" in self.positive:
            re.compile(self.positive["regex"])

    def matches(self, value) -> bool:
        kind, arg = next(iter(self.positive.items()))
        if kind == "is_true":
            return value is True or (isinstance(value, str) and value.lower() == "true")
        text = str(value).strip().lower()
        if kind == "in":
            return text in {a.lower() for a in arg}
        if kind == "not_in":
            return text not in {a.lower() for a in arg}
        return re.search(arg, text, re.IGNORECASE) is not None


def load_field_mapping(path: str | Path | None = None) -> list[MappingRule]:
    if path is None:
        raw = json.loads(resources.files("sdoh_eventkit.data").joinpath("field_mapping.json").read_text("utf-8"))
    else:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [MappingRule(r["source"], r["field"], r["sdoh"], r["positive"]) for r in raw["rules"]]


# --- indicators --------------------------------------------------------------


def _in_year(ts, year: int) -> bool:
    if isinstance(ts, str):
        ts = parse_timestamp(ts)
    return ts.year == year


def structured_indicators(records, mapping: list[MappingRule], year: int, warnings: Counter | None = None):
    warnings = warnings if warnings is not None else Counter()
    by_field = defaultdict(list)
    for rule in mapping:
        by_field[(rule.source, rule.field)].append(rule)
    out = set()
    for rec in records:
        rules = by_field.get((rec.source, rec.field))
        if not rules:
            if warnings[(rec.source, rec.field)] == 0:
                log.warning("unmapped structured field %s.%s skipped", rec.source, rec.field)
            warnings[(rec.source, rec.field)] += 1
            continue
        # undated records were already restricted to patients seen in the year
        if rec.timestamp is not None and rec.timestamp.year != year:
            continue
        for rule in rules:
            if rule.matches(rec.value):
                out.add(PatientIndicator(rec.patient_id, rule.sdoh, STRUCTURED))
    return out


def event_indicators(anns: AnnotationSet) -> set[str]:
    """Indicator names supported by the events of a single document."""
    found = set()
    substance = {
        EventType.ALCOHOL: "alcohol_current",
        EventType.TOBACCO: "tobacco_current",
        EventType.DRUG: "drug_current",
    }
    for event in anns.events:
        et = event.event_type
        if et in substance:
            if any(a.subtype == "current" for a in event.labeled(LabeledArgType.STATUS_TIME)):
                found.add(substance[et])
        elif et is EventType.EMPLOYMENT:
            if event.labeled(LabeledArgType.STATUS_EMPLOY):
                found.add("employment_any")
        elif et is EventType.LIVING_STATUS:
            if any(a.subtype == "homeless" for a in event.labeled(LabeledArgType.TYPE_LIVING)):
                found.add("homeless_current")
    return found


def _manifest_map(manifest) -> dict[str, dict]:
    out = {}
    for row in manifest:
        if isinstance(row, Document):
            out[row.id] = {"id": row.id, "patient_id": row.patient_id, "timestamp": row.timestamp,
                           "note_type": row.note_type, "specialty": row.specialty}
        else:
            out[row["id"]] = row
    return out


def extracted_indicators(extracted: dict[str, AnnotationSet], manifest, year: int):
    rows = _manifest_map(manifest)
    out = set()
    for doc_id, anns in extracted.items():
        if doc_id not in rows:
            raise KeyError(f"unknown document id: {doc_id} not in manifest")
        row = rows[doc_id]
        if not _in_year(row["timestamp"], year):
            continue
        for name in event_indicators(anns):
            out.add(PatientIndicator(row["patient_id"], name, EXTRACTED))
    return out


def patient_indicators(structured, extracted, manifest, year: int, mapping=None, warnings=None):
    """Sorted, de-duplicated indicators from both sources for ``year``."""
    mapping = load_field_mapping() if mapping is None else mapping
    rows = structured_indicators(structured, mapping, year, warnings) | extracted_indicators(extracted, manifest, year)
    return sorted(rows)


def narrative_patients(documents, year: int) -> set[str]:
    """Patients with at least one non-empty social-history section in ``year``."""
    return {d.patient_id for d in documents if d.section_text.strip() and _in_year(d.timestamp, year)}


# --- comparison --------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    only_structured: int
    only_extracted: int
    both: int

    @property
    def union(self) -> int:
        return self.only_structured + self.only_extracted + self.both

    def proportions(self) -> dict[str, float]:
        n = self.union
        if n == 0:
            return {"only_structured": 0.0, "only_extracted": 0.0, "both": 0.0}
        return {
            "only_structured": self.only_structured / n,
            "only_extracted": self.only_extracted / n,
            "both": self.both / n,
        }

    def to_dict(self) -> dict:
        return {
            "only_structured": self.only_structured,
            "only_extracted": self.only_extracted,
            "both": self.both,
            "union": self.union,
            "proportions": self.proportions(),
        }


def partition(structured: set, extracted: set) -> Partition:
    return Partition(len(structured - extracted), len(extracted - structured), len(structured & extracted))


@dataclass
class ComparisonReport:
    all_patients: dict[str, Partition]
    narrative_only: dict[str, Partition] | None = None
    structured_counts: dict[str, tuple[int, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "denominator": UNION_NOTE,
            "all_patients": {k: p.to_dict() for k, p in self.all_patients.items()},
            "reference": {
                "note": "published full-scale reference, not comparable to synthetic runs",
                "found_only_in_notes": {"homeless_current": 0.32, "tobacco_current": 0.19, "drug_current": 0.10},
            },
        }
        if self.narrative_only is not None:
            out["narrative_patients_only"] = {k: p.to_dict() for k, p in self.narrative_only.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        header = ["sdoh", "structured only", "extracted only", "both"]
        if self.narrative_only is not None:
            header += ["narr: structured only", "narr: extracted only", "narr: both"]
        rows = [header]

        def cells(p: Partition):
            props = p.proportions()
            return [f"{p.only_structured} ({props['only_structured']:.0%})",
                    f"{p.only_extracted} ({props['only_extracted']:.0%})",
                    f"{p.both} ({props['both']:.0%})"]

        for sdoh, p in self.all_patients.items():
            row = [sdoh] + cells(p)
            if self.narrative_only is not None:
                row += cells(self.narrative_only[sdoh])
            rows.append(row)
        return f"# {UNION_NOTE}\n" + format_table(rows)


def compare(indicators, narrative: set[str] | None = None) -> ComparisonReport:
    """Split positive patients per indicator into the three source partitions.

    With ``narrative`` given, a second view limits both sides to patients
    who have social-history narrative text.
    """
    sets = {(s, src): set() for s in SDOH_INDICATORS for src in (STRUCTURED, EXTRACTED)}
    for ind in indicators:
        sets[(ind.sdoh, ind.source)].add(ind.patient_id)
    full = {s: partition(sets[(s, STRUCTURED)], sets[(s, EXTRACTED)]) for s in SDOH_INDICATORS}
    restricted = None
    if narrative is not None:
        restricted = {
            s: partition(sets[(s, STRUCTURED)] & narrative, sets[(s, EXTRACTED)] & narrative) for s in SDOH_INDICATORS
        }
    counts = {
        s: (len(sets[(s, STRUCTURED)]), len(sets[(s, STRUCTURED)] & narrative) if narrative is not None else None)
        for s in SDOH_INDICATORS
    }
    return ComparisonReport(full, restricted, counts)


# --- stratification ----------------------------------------------------------


@dataclass
class Stratification:
    by_note_type: dict[str, dict[str, int]]
    by_specialty: dict[str, dict[str, int]]
    specialties: list[str]

    def to_dict(self) -> dict:
        return {"by_note_type": self.by_note_type, "by_specialty": self.by_specialty, "top_specialties": self.specialties}

    def to_table(self) -> str:
        parts = []
        for title, table in (("note type", self.by_note_type), ("specialty", self.by_specialty)):
            columns = sorted({c for row in table.values() for c in row}) if title == "note type" else self.specialties
            rows = [["event"] + columns]
            for et, row in table.items():
                rows.append([et] + [row.get(c, 0) for c in columns])
            parts.append(f"# unique documents by {title}\n" + format_table(rows))
        return "\n".join(parts)


def stratify(extracted: dict[str, AnnotationSet], manifest, top_n: int = 20) -> Stratification:
    """Unique-document event counts by note type and by provider specialty.

    The specialty table keeps the ``top_n`` specialties with the most
    social-history sections (ties broken by name).
    """
    rows = _manifest_map(manifest)
    section_count = Counter(rows[d]["specialty"] for d in extracted if rows[d]["specialty"])
    top = [s for s, _ in sorted(section_count.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]]
    top_set = set(top)
    by_type: dict[str, Counter] = defaultdict(Counter)
    by_spec: dict[str, Counter] = defaultdict(Counter)
    for doc_id in sorted(extracted):
        row = rows[doc_id]
        for et in sorted({e.event_type.value for e in extracted[doc_id].events}):
            by_type[et][row["note_type"]] += 1
            if row["specialty"] in top_set:
                by_spec[et][row["specialty"]] += 1
    order = [e.value for e in EventType]
    return Stratification(
        {et: dict(sorted(by_type[et].items())) for et in order if et in by_type},
        {et: dict(sorted(by_spec[et].items())) for et in order if et in by_spec},
        top,
    )


# --- substance normalization -------------------------------------------------

CATEGORY_OF = {EventType.DRUG: "drug", EventType.ALCOHOL: "alcohol"}
UNNORMALIZED = "unnormalized"


@dataclass(frozen=True)
class LexiconRule:
    pattern: re.Pattern
    canonical: str
    category: str


@dataclass(frozen=True)
class NormalizationLexicon:
    rules: tuple[LexiconRule, ...]

    @classmethod
    def from_rules(cls, rules) -> "NormalizationLexicon":
        compiled = []
        for i, r in enumerate(rules):
            if r["category"] not in ("drug", "alcohol"):
                raise ValueError(f"rule {i}: category must be drug or alcohol")
            try:
                pattern = re.compile(r["pattern"], re.IGNORECASE)
            except re.error as exc:
                raise ValueError(f"rule {i}: bad pattern: {exc}") from None
            compiled.append(LexiconRule(pattern, r["canonical"], r["category"]))
        return cls(tuple(compiled))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "NormalizationLexicon":
        if path is None:
            raw = json.loads(resources.files("sdoh_eventkit.data").joinpath("lexicon.json").read_text("utf-8"))
        else:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_rules(raw["rules"])

    def normalize(self, text: str, category: str) -> str:
        for rule in self.rules:
            if rule.category == category and rule.pattern.search(text):
                return rule.canonical
        return UNNORMALIZED


@dataclass
class SubstanceSummary:
    per_patient: dict[str, dict[str, set[str]]]
    patient_counts: dict[str, dict[str, int]]
    multi_fraction: dict[str, dict[str, float | int]]

    def to_dict(self) -> dict:
        return {
            "patient_counts": self.patient_counts,
            "multiple_values": self.multi_fraction,
            "per_patient": {
                pid: {cat: sorted(vals) for cat, vals in cats.items()} for pid, cats in sorted(self.per_patient.items())
            },
            "reference": {
                "note": "published full-scale reference, not comparable to synthetic runs",
                "drug_patients_normalized": 5807,
                "drug_patients_multiple": 1503,
            },
        }

    def to_table(self) -> str:
        rows = [("category", "value", "patients")]
        for cat, counts in self.patient_counts.items():
            for value, n in counts.items():
                rows.append((cat, value, n))
        text = format_table(rows)
        for cat, info in self.multi_fraction.items():
            text += f"{cat}: {info['multiple']}/{info['patients']} patients with more than one value ({info['fraction']:.0%})\n"
        return text


def normalize_substances(items, lexicon: NormalizationLexicon) -> SubstanceSummary:
    """Map Type-argument spans of Drug and Alcohol events to canonical names.

    ``items`` pairs each :class:`Document` with its extracted events.  The
    multi-value fraction counts only normalized values, over patients with
    at least one normalized value in the category.
    """
    per_patient: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
    for doc, anns in items:
        for event in anns.events:
            category = CATEGORY_OF.get(event.event_type)
            if category is None:
                continue
            for arg in event.arguments:
                if arg.arg_type is SpanOnlyArgType.TYPE:
                    per_patient[doc.patient_id][category].add(lexicon.normalize(doc.span_text(arg.span), category))
    counts: dict[str, Counter] = {"drug": Counter(), "alcohol": Counter()}
    multi = {}
    for category in ("drug", "alcohol"):
        normalized_patients = multiple = 0
        for cats in per_patient.values():
            values = cats.get(category, set())
            counts[category].update(values)
            known = values - {UNNORMALIZED}
            normalized_patients += bool(known)
            multiple += len(known) > 1
        multi[category] = {
            "patients": normalized_patients,
            "multiple": multiple,
            "fraction": multiple / normalized_patients if normalized_patients else 0.0,
        }
    patient_counts = {
        cat: dict(sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))) for cat, c in counts.items()
    }
    frozen = {pid: {cat: set(v) for cat, v in cats.items()} for pid, cats in per_patient.items()}
    return SubstanceSummary(frozen, patient_counts, multi)
