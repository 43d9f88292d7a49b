"""Event schema, label inventories and the annotation data model.

Every other module builds on these immutable value types.  Canonical
serialization names are PascalCase for event and argument types and lower
case (with spaces) for subtype labels.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Union

NULL = "null"


class EventType(str, Enum):
    ALCOHOL = "Alcohol"
    DRUG = "Drug"
    TOBACCO = "Tobacco"
    EMPLOYMENT = "Employment"
    LIVING_STATUS = "LivingStatus"


class SpanOnlyArgType(str, Enum):
    AMOUNT = "Amount"
    DURATION = "Duration"
    FREQUENCY = "Frequency"
    HISTORY = "History"
    TYPE = "Type"
    METHOD = "Method"


class LabeledArgType(str, Enum):
    STATUS_TIME = "StatusTime"
    STATUS_EMPLOY = "StatusEmploy"
    TYPE_LIVING = "TypeLiving"


SUBSTANCES = (EventType.ALCOHOL, EventType.DRUG, EventType.TOBACCO)

# Index 0 is always the negative label.
SUBTYPE_LABELS: dict[LabeledArgType, tuple[str, ...]] = {
    LabeledArgType.STATUS_TIME: (NULL, "none", "current", "past"),
    LabeledArgType.STATUS_EMPLOY: (
        NULL,
        "employed",
        "unemployed",
        "retired",
        "on disability",
        "student",
        "homemaker",
    ),
    LabeledArgType.TYPE_LIVING: (NULL, "alone", "with family", "with others", "homeless"),
}

REQUIRED_LABELED: dict[EventType, LabeledArgType] = {
    EventType.ALCOHOL: LabeledArgType.STATUS_TIME,
    EventType.DRUG: LabeledArgType.STATUS_TIME,
    EventType.TOBACCO: LabeledArgType.STATUS_TIME,
    EventType.EMPLOYMENT: LabeledArgType.STATUS_EMPLOY,
    EventType.LIVING_STATUS: LabeledArgType.TYPE_LIVING,
}

_SUBSTANCE_SPAN_ONLY = (
    SpanOnlyArgType.AMOUNT,
    SpanOnlyArgType.DURATION,
    SpanOnlyArgType.FREQUENCY,
    SpanOnlyArgType.HISTORY,
    SpanOnlyArgType.TYPE,
)
_SPAN_ONLY_ALLOWED: dict[EventType, tuple[SpanOnlyArgType, ...]] = {
    EventType.ALCOHOL: _SUBSTANCE_SPAN_ONLY,
    EventType.DRUG: _SUBSTANCE_SPAN_ONLY,
    EventType.TOBACCO: _SUBSTANCE_SPAN_ONLY,
    EventType.EMPLOYMENT: (
        SpanOnlyArgType.DURATION,
        SpanOnlyArgType.HISTORY,
        SpanOnlyArgType.TYPE,
    ),
    EventType.LIVING_STATUS: (SpanOnlyArgType.DURATION, SpanOnlyArgType.HISTORY),
}


@dataclass(frozen=True, order=True)
class Span:
    """Half-open character range ``[start, end)``."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def overlap(self, other: Span) -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))


@dataclass(frozen=True)
class Trigger:
    event_type: EventType
    span: Span


@dataclass(frozen=True)
class SpanOnlyArg:
    arg_type: SpanOnlyArgType
    span: Span


@dataclass(frozen=True)
class LabeledArg:
    arg_type: LabeledArgType
    subtype: str
    span: Span


Argument = Union[SpanOnlyArg, LabeledArg]


@dataclass(frozen=True)
class Event:
    trigger: Trigger
    arguments: tuple[Argument, ...] = ()

    @property
    def event_type(self) -> EventType:
        return self.trigger.event_type

    @property
    def incomplete(self) -> bool:
        """True when the event lacks its required labeled argument."""
        required = REQUIRED_LABELED[self.trigger.event_type]
        return not any(
            isinstance(a, LabeledArg) and a.arg_type is required for a in self.arguments
        )

    def labeled(self, arg_type: LabeledArgType) -> list[LabeledArg]:
        return [a for a in self.arguments if isinstance(a, LabeledArg) and a.arg_type is arg_type]


@dataclass(frozen=True)
class OrphanEntity:
    """An annotated span that no event references."""

    type_name: str
    span: Span
    subtype: str | None = None


@dataclass(frozen=True)
class AnnotationSet:
    document_id: str
    events: tuple[Event, ...] = ()
    orphan_entities: tuple[OrphanEntity, ...] = ()


def event_sort_key(event: Event):
    t = event.trigger
    return (t.span.start, t.span.end, t.event_type.value)


@dataclass(frozen=True)
class CompatibilityEntry:
    span_only: tuple[SpanOnlyArgType, ...]
    required: LabeledArgType


@dataclass(frozen=True)
class LabelInventory:
    """Label sets that size the model heads and drive validation."""

    include_method: bool = False
    span_only_types: tuple[SpanOnlyArgType, ...] = field(init=False)

    def __post_init__(self):
        types = tuple(t for t in SpanOnlyArgType if self.include_method or t is not SpanOnlyArgType.METHOD)
        object.__setattr__(self, "span_only_types", types)

    @property
    def entity_labels(self) -> tuple[str, ...]:
        return (NULL,) + tuple(e.value for e in EventType) + tuple(t.value for t in self.span_only_types)

    @property
    def relation_labels(self) -> tuple[str, ...]:
        return (NULL, "has")

    @property
    def subtype_labels(self) -> dict[LabeledArgType, tuple[str, ...]]:
        return dict(SUBTYPE_LABELS)

    @property
    def labeled_types(self) -> tuple[LabeledArgType, ...]:
        return tuple(LabeledArgType)

    def entity_index(self, label: str) -> int:
        return self.entity_labels.index(label)

    def subtype_index(self, arg_type: LabeledArgType, label: str) -> int:
        return SUBTYPE_LABELS[arg_type].index(label)

    def to_dict(self) -> dict:
        return {"include_method": self.include_method}

    def digest(self) -> str:
        payload = json.dumps(
            {
                "entity": self.entity_labels,
                "relation": self.relation_labels,
                "subtype": {k.value: v for k, v in SUBTYPE_LABELS.items()},
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def compatibility_table(inv: LabelInventory) -> dict[EventType, CompatibilityEntry]:
    table = {}
    for event_type, allowed in _SPAN_ONLY_ALLOWED.items():
        span_only = allowed
        if inv.include_method and event_type in SUBSTANCES:
            span_only = allowed + (SpanOnlyArgType.METHOD,)
        table[event_type] = CompatibilityEntry(span_only, REQUIRED_LABELED[event_type])
    return table


def argument_allowed(event_type: EventType, arg: Argument, inv: LabelInventory) -> bool:
    entry = compatibility_table(inv)[event_type]
    if isinstance(arg, LabeledArg):
        return arg.arg_type is entry.required
    return arg.arg_type in entry.span_only


def validate_event(event: Event, inv: LabelInventory) -> list[str]:
    """Return every rule the event violates; an empty list means it conforms.

    A missing required labeled argument is not a violation; such events are
    reported through ``Event.incomplete`` instead.
    """
    violations = []
    event_type = event.trigger.event_type
    seen_labeled = set()
    for arg in event.arguments:
        if isinstance(arg, LabeledArg):
            labels = SUBTYPE_LABELS[arg.arg_type]
            if arg.subtype == NULL or arg.subtype not in labels:
                violations.append(f"invalid subtype {arg.subtype!r} for {arg.arg_type.value}")
            if arg.arg_type in seen_labeled:
                violations.append(f"duplicate labeled argument {arg.arg_type.value}")
            seen_labeled.add(arg.arg_type)
        elif arg.arg_type not in inv.span_only_types:
            violations.append(f"{arg.arg_type.value} not in label inventory")
            continue
        if not argument_allowed(event_type, arg, inv):
            violations.append(f"{arg.arg_type.value} not permitted for {event_type.value}")
    return violations


def validate_annotations(anns: AnnotationSet, text: str, inv: LabelInventory) -> list[str]:
    """Validate every event plus the text-bounds invariant of all spans."""
    problems = []
    for i, event in enumerate(anns.events):
        spans = [event.trigger.span] + [a.span for a in event.arguments]
        for span in spans:
            if span.end > len(text):
                problems.append(f"event {i + 1}: span [{span.start},{span.end}) outside text")
        for v in validate_event(event, inv):
            problems.append(f"event {i + 1} ({event.event_type.value}): {v}")
    for orphan in anns.orphan_entities:
        if orphan.span.end > len(text):
            problems.append(f"orphan {orphan.type_name}: span outside text")
    return problems


def parse_type_name(name: str):
    """Map a canonical type name to its enum member (event, span-only or labeled)."""
    for enum in (EventType, SpanOnlyArgType, LabeledArgType):
        try:
            return enum(name)
        except ValueError:
            continue
    raise ValueError(f"unknown type name {name!r}")
