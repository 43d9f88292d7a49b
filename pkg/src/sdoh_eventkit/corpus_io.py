"""Standoff corpora, social-history section extraction and tokenization.

Annotation offsets in ``.ann`` files are relative to the ``.txt`` content
(BRAT convention).  In memory, every span is relative to the document's
social-history section text.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .schema import (
    AnnotationSet,
    Event,
    EventType,
    LabeledArg,
    LabeledArgType,
    LabelInventory,
    OrphanEntity,
    Span,
    SpanOnlyArg,
    SpanOnlyArgType,
    Trigger,
    event_sort_key,
    parse_type_name,
)

log = logging.getLogger(__name__)

DEFAULT_HEADERS = ("SOCIAL HISTORY", "SOCIAL HX", "SHX")
NOTE_TYPES = ("progress", "emergency", "social_history")
MANIFEST_COLUMNS = ("id", "patient_id", "timestamp", "note_type", "specialty", "partition")

_SECTION_END = re.compile(r"^[A-Z][A-Z /]+:", re.M)


class StandoffError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    full_text: str
    section_text: str = ""
    section_offset: int = 0
    patient_id: str = ""
    timestamp: str = ""
    note_type: str = "social_history"
    specialty: str = ""

    def __post_init__(self):
        end = self.section_offset + len(self.section_text)
        if self.full_text[self.section_offset:end] != self.section_text:
            raise ValueError(f"{self.id}: section_text is not a substring of full_text at its offset")

    def span_text(self, span: Span) -> str:
        return self.section_text[span.start:span.end]


@dataclass(frozen=True)
class Token:
    text: str
    span: Span


@dataclass(frozen=True)
class TokenizedDocument:
    document_id: str
    tokens: tuple[Token, ...]
    sentences: tuple[tuple[int, int], ...]  # half-open token-index ranges

    def sentence_tokens(self, index: int) -> tuple[Token, ...]:
        start, end = self.sentences[index]
        return self.tokens[start:end]


@dataclass
class CorpusPartition:
    name: str
    items: list[tuple[Document, AnnotationSet]] = field(default_factory=list)

    def __post_init__(self):
        ids = [doc.id for doc, _ in self.items]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate document ids in partition {self.name!r}")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


# --- sections -------------------------------------------------------------


def extract_social_history(full_text: str, headers=DEFAULT_HEADERS) -> tuple[str, int] | None:
    """Return ``(section_text, section_offset)`` or None when no header matches.

    The section runs from just after the header (and its colon) to the next
    all-caps ``HEADER:`` line or the end of the text; surrounding whitespace
    is trimmed and the offset adjusted accordingly.
    """
    alternatives = "|".join(re.escape(h) for h in headers)
    header = re.compile(rf"^[ \t]*(?:{alternatives})[ \t]*(?::|$)", re.I | re.M)
    m = header.search(full_text)
    if m is None:
        return None
    start = m.end()
    end_match = _SECTION_END.search(full_text, start)
    if end_match is not None and end_match.start() == start:
        end_match = _SECTION_END.search(full_text, start + 1)
    end = end_match.start() if end_match else len(full_text)
    while start < end and full_text[start].isspace():
        start += 1
    while end > start and full_text[end - 1].isspace():
        end -= 1
    if start == end:
        return None
    return full_text[start:end], start


def make_document(
    doc_id: str,
    full_text: str,
    headers=DEFAULT_HEADERS,
    **meta,
) -> Document:
    """Build a Document, locating its social-history section.

    Texts without a recognized header are treated as being the section
    themselves (social-history module entries carry no header).
    """
    found = extract_social_history(full_text, headers)
    if found is None:
        section, offset = full_text, 0
    else:
        section, offset = found
    return Document(doc_id, full_text, section, offset, **meta)


# --- tokenization -----------------------------------------------------------

_TOKEN = re.compile(r"\d+(?:\.\d+)+\w*|\w+|[^\w\s]")
ABBREVIATIONS = frozenset(
    {"dr", "mr", "mrs", "ms", "approx", "etc", "vs", "pt", "yrs", "yr", "hx", "st", "e.g", "i.e", "wk", "wks", "mo", "mos"}
)
_SENTENCE_END = {".", ";"}


def tokenize(section_text: str, document_id: str = "") -> TokenizedDocument:
    tokens = [Token(m.group(), Span(m.start(), m.end())) for m in _TOKEN.finditer(section_text)]
    sentences = []
    start = 0
    for i, tok in enumerate(tokens):
        if i > start and "\n" in section_text[tokens[i - 1].span.end:tok.span.start]:
            sentences.append((start, i))
            start = i
        if tok.text in _SENTENCE_END:
            prev = tokens[i - 1].text.lower() if i > 0 else ""
            if tok.text == ";" or prev not in ABBREVIATIONS:
                sentences.append((start, i + 1))
                start = i + 1
    if start < len(tokens):
        sentences.append((start, len(tokens)))
    return TokenizedDocument(document_id, tuple(tokens), tuple(sentences))


# --- standoff ---------------------------------------------------------------


def _arg_role(arg_type) -> str:
    if arg_type in (LabeledArgType.STATUS_TIME, LabeledArgType.STATUS_EMPLOY):
        return "Status"
    if arg_type is LabeledArgType.TYPE_LIVING:
        return "Type"
    return arg_type.value


def parse_standoff(
    text: str,
    ann: str,
    inv: LabelInventory,
    document_id: str = "doc",
    headers=DEFAULT_HEADERS,
    **meta,
) -> tuple[Document, AnnotationSet]:
    doc = make_document(document_id, text, headers, **meta)
    lo, hi = doc.section_offset, doc.section_offset + len(doc.section_text)

    entities: dict[str, tuple[object, Span, int]] = {}
    attributes: dict[str, str] = {}
    event_lines: list[tuple[int, str]] = []

    for lineno, line in enumerate(ann.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        ident = fields[0]
        try:
            if ident.startswith("T"):
                if len(fields) < 2:
                    raise ValueError("missing type/offsets")
                parts = fields[1].split(" ")
                if len(parts) != 3 or ";" in fields[1]:
                    raise ValueError("expected '<type> <start> <end>'")
                type_name, start, end = parts[0], int(parts[1]), int(parts[2])
            elif ident.startswith("A"):
                parts = fields[1].split(" ", 2)
                if len(parts) != 3:
                    raise ValueError("expected '<name> <T-id> <value>'")
            elif ident.startswith("E"):
                if len(fields) < 2 or not fields[1].strip():
                    raise ValueError("empty event line")
            else:
                raise ValueError(f"unknown line type {ident!r}")
        except ValueError as exc:
            raise StandoffError(f"malformed line {lineno}: {exc}") from None

        if ident.startswith("T"):
            try:
                kind = parse_type_name(type_name)
            except ValueError:
                raise StandoffError(f"unknown type name {type_name!r}: line {lineno}") from None
            if kind is SpanOnlyArgType.METHOD and not inv.include_method:
                raise StandoffError(f"unknown type name 'Method' (inventory excludes it): line {lineno}")
            if not (0 <= start < end <= len(text)):
                raise StandoffError(f"span out of range: line {lineno}")
            if start < lo or end > hi:
                raise StandoffError(f"span outside social-history section: line {lineno}")
            entities[ident] = (kind, Span(start - lo, end - lo), lineno)
        elif ident.startswith("A"):
            name, target, value = parts
            attributes[target] = value
            if not name.endswith("Val"):
                raise StandoffError(f"malformed line {lineno}: attribute name {name!r}")
        else:
            event_lines.append((lineno, fields[1]))

    events = []
    referenced = set()
    for lineno, body in event_lines:
        items = body.split()
        try:
            trig_type, trig_id = items[0].split(":")
        except ValueError:
            raise StandoffError(f"malformed line {lineno}: bad trigger reference") from None
        if trig_id not in entities:
            raise StandoffError(f"undefined entity {trig_id}: line {lineno}")
        kind, span, _ = entities[trig_id]
        if not isinstance(kind, EventType) or kind.value != trig_type:
            raise StandoffError(f"trigger {trig_id} is not a {trig_type} span: line {lineno}")
        referenced.add(trig_id)
        args = []
        for item in items[1:]:
            try:
                role, arg_id = item.split(":")
            except ValueError:
                raise StandoffError(f"malformed line {lineno}: bad argument {item!r}") from None
            if arg_id not in entities:
                raise StandoffError(f"undefined entity {arg_id}: line {lineno}")
            arg_kind, arg_span, _ = entities[arg_id]
            if isinstance(arg_kind, EventType):
                raise StandoffError(f"nested event argument {arg_id}: line {lineno}")
            if role.rstrip("0123456789") != _arg_role(arg_kind):
                raise StandoffError(f"role {role!r} does not match {arg_kind.value}: line {lineno}")
            referenced.add(arg_id)
            if isinstance(arg_kind, LabeledArgType):
                if arg_id not in attributes:
                    raise StandoffError(f"missing subtype attribute for {arg_id}: line {lineno}")
                args.append(LabeledArg(arg_kind, attributes[arg_id], arg_span))
            else:
                args.append(SpanOnlyArg(arg_kind, arg_span))
        events.append(Event(Trigger(kind, span), tuple(args)))

    orphans = tuple(
        OrphanEntity(kind.value, span, attributes.get(ident))
        for ident, (kind, span, _) in entities.items()
        if ident not in referenced
    )
    events.sort(key=event_sort_key)
    return doc, AnnotationSet(document_id, tuple(events), orphans)


def serialize_standoff(doc: Document, anns: AnnotationSet) -> str:
    t_lines, a_lines, e_lines = [], [], []
    ids: dict[tuple, str] = {}

    def entity_id(type_name: str, span: Span, subtype: str | None) -> str:
        key = (type_name, span, subtype)
        if key not in ids:
            ident = f"T{len(ids) + 1}"
            ids[key] = ident
            start, end = span.start + doc.section_offset, span.end + doc.section_offset
            surface = doc.full_text[start:end].replace("\n", " ").replace("\t", " ")
            t_lines.append(f"{ident}\t{type_name} {start} {end}\t{surface}")
            if subtype is not None:
                a_lines.append(f"A{len(a_lines) + 1}\t{type_name}Val {ident} {subtype}")
        return ids[key]

    for n, event in enumerate(sorted(anns.events, key=event_sort_key), start=1):
        trig = event.trigger
        parts = [f"{trig.event_type.value}:{entity_id(trig.event_type.value, trig.span, None)}"]
        role_counts: dict[str, int] = {}
        for arg in event.arguments:
            subtype = arg.subtype if isinstance(arg, LabeledArg) else None
            ident = entity_id(arg.arg_type.value, arg.span, subtype)
            role = _arg_role(arg.arg_type)
            role_counts[role] = role_counts.get(role, 0) + 1
            suffix = str(role_counts[role]) if role_counts[role] > 1 else ""
            parts.append(f"{role}{suffix}:{ident}")
        e_lines.append(f"E{n}\t{' '.join(parts)}")
    for orphan in anns.orphan_entities:
        entity_id(orphan.type_name, orphan.span, orphan.subtype)
    lines = t_lines + a_lines + e_lines
    return "".join(line + "\n" for line in lines)


# --- corpus directories ------------------------------------------------------


def read_manifest(corpus_dir: str | Path) -> list[dict]:
    path = Path(corpus_dir) / "manifest.csv"
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for lineno, row in enumerate(rows, start=2):
        missing = [c for c in MANIFEST_COLUMNS if c not in row or row[c] is None]
        if missing:
            raise ValueError(f"{path}: row {lineno}: missing columns {missing}")
    return rows


def write_manifest(corpus_dir: str | Path, rows: list[dict]) -> None:
    path = Path(corpus_dir) / "manifest.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_corpus(
    corpus_dir: str | Path,
    inv: LabelInventory,
    partition: str | None = None,
    headers=DEFAULT_HEADERS,
) -> CorpusPartition:
    corpus_dir = Path(corpus_dir)
    items = []
    for row in read_manifest(corpus_dir):
        if partition is not None and row["partition"] != partition:
            continue
        text = (corpus_dir / f"{row['id']}.txt").read_text(encoding="utf-8")
        ann_path = corpus_dir / f"{row['id']}.ann"
        ann = ann_path.read_text(encoding="utf-8") if ann_path.exists() else ""
        try:
            items.append(
                parse_standoff(
                    text,
                    ann,
                    inv,
                    document_id=row["id"],
                    headers=headers,
                    patient_id=row["patient_id"],
                    timestamp=row["timestamp"],
                    note_type=row["note_type"],
                    specialty=row["specialty"],
                )
            )
        except StandoffError as exc:
            raise StandoffError(f"{ann_path.name}: {exc}") from None
    return CorpusPartition(partition or "all", items)


def write_corpus(corpus_dir: str | Path, items, partition_of=None) -> None:
    """Write paired ``.txt``/``.ann`` files plus ``manifest.csv``.

    ``partition_of`` maps a document id to its partition name; it defaults
    to an empty partition column.
    """
    corpus_dir = Path(corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for doc, anns in items:
        (corpus_dir / f"{doc.id}.txt").write_text(doc.full_text, encoding="utf-8")
        (corpus_dir / f"{doc.id}.ann").write_text(serialize_standoff(doc, anns), encoding="utf-8")
        rows.append(
            {
                "id": doc.id,
                "patient_id": doc.patient_id,
                "timestamp": doc.timestamp,
                "note_type": doc.note_type,
                "specialty": doc.specialty,
                "partition": partition_of(doc.id) if partition_of else "",
            }
        )
    write_manifest(corpus_dir, rows)


def latest_social_history(items):
    """Keep only the latest social-history entry per patient; other notes pass through."""
    latest: dict[str, str] = {}
    for doc, _ in items:
        if doc.note_type == "social_history":
            if doc.patient_id not in latest or doc.timestamp > latest[doc.patient_id]:
                latest[doc.patient_id] = doc.timestamp
    kept, seen = [], set()
    for doc, anns in items:
        if doc.note_type == "social_history":
            if doc.timestamp != latest[doc.patient_id] or doc.patient_id in seen:
                continue
            seen.add(doc.patient_id)
        kept.append((doc, anns))
    return kept
