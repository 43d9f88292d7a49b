import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import ev
from sdoh_eventkit.schema import (
    NULL,
    SUBTYPE_LABELS,
    AnnotationSet,
    EventType,
    LabeledArgType,
    LabelInventory,
    Span,
    SpanOnlyArgType,
    compatibility_table,
    parse_type_name,
    validate_annotations,
    validate_event,
)


def test_enum_cardinalities():
    assert [e.value for e in EventType] == ["Alcohol", "Drug", "Tobacco", "Employment", "LivingStatus"]
    assert len(LabeledArgType) == 3
    assert {t.value for t in SpanOnlyArgType} == {"Amount", "Duration", "Frequency", "History", "Type", "Method"}


def test_inventory_sizes_default():
    inv = LabelInventory()
    assert len(inv.entity_labels) == 11
    assert inv.entity_labels[0] == NULL
    assert "Method" not in inv.entity_labels
    assert inv.relation_labels == ("null", "has")
    assert [len(inv.subtype_labels[v]) for v in LabeledArgType] == [4, 7, 5]


def test_inventory_with_method():
    inv = LabelInventory(include_method=True)
    assert len(inv.entity_labels) == 12
    assert inv.digest() != LabelInventory().digest()


def test_null_first_and_subtypes_unique_to_one_type():
    seen = {}
    for arg_type, labels in SUBTYPE_LABELS.items():
        assert labels[0] == NULL
        for label in labels[1:]:
            assert label not in seen, label
            seen[label] = arg_type


def test_compatibility_required():
    table = compatibility_table(LabelInventory())
    assert table[EventType.ALCOHOL].required is LabeledArgType.STATUS_TIME
    assert table[EventType.LIVING_STATUS].required is LabeledArgType.TYPE_LIVING
    assert table[EventType.EMPLOYMENT].required is LabeledArgType.STATUS_EMPLOY
    assert SpanOnlyArgType.METHOD not in table[EventType.DRUG].span_only
    assert SpanOnlyArgType.METHOD in compatibility_table(LabelInventory(True))[EventType.DRUG].span_only


def test_validate_ok(inv):
    assert validate_event(ev("Tobacco", 0, 7, ("StatusTime", "past", 9, 15)), inv) == []


def test_validate_cross_event_argument(inv):
    out = validate_event(ev("Employment", 0, 4, ("TypeLiving", "alone", 6, 11)), inv)
    assert "TypeLiving not permitted for Employment" in out


def test_validate_duplicate_labeled(inv):
    out = validate_event(ev("Alcohol", 0, 4, ("StatusTime", "none", 5, 9), ("StatusTime", "past", 10, 14)), inv)
    assert any(v.startswith("duplicate labeled argument") for v in out)


def test_validate_bad_subtype_and_method(inv):
    assert validate_event(ev("Drug", 0, 4, ("StatusTime", "null", 5, 9)), inv)
    assert validate_event(ev("Drug", 0, 4, ("StatusTime", "retired", 5, 9)), inv)
    out = validate_event(ev("Drug", 0, 4, ("Method", 5, 7)), inv)
    assert out == ["Method not in label inventory"]
    assert validate_event(ev("Drug", 0, 4, ("Method", 5, 7)), LabelInventory(True)) == []


def test_incomplete_flag():
    assert ev("Drug", 0, 4).incomplete
    assert not ev("Drug", 0, 4, ("StatusTime", "none", 5, 9)).incomplete
    assert ev("Employment", 0, 4, ("StatusTime", "none", 5, 9)).incomplete


def test_span_invariants():
    with pytest.raises(ValueError):
        Span(3, 3)
    with pytest.raises(ValueError):
        Span(-1, 2)
    assert Span(10, 17).overlap(Span(16, 20)) == 1
    assert Span(5, 8).overlap(Span(8, 12)) == 0


def test_annotations_out_of_text(inv):
    anns = AnnotationSet("d", (ev("Drug", 0, 30),))
    assert validate_annotations(anns, "short", inv)


def test_parse_type_name():
    assert parse_type_name("Tobacco") is EventType.TOBACCO
    assert parse_type_name("StatusTime") is LabeledArgType.STATUS_TIME
    with pytest.raises(ValueError):
        parse_type_name("Smoking")


@given(st.sampled_from(list(EventType)), st.sampled_from(list(LabeledArgType)), st.data())
def test_validate_is_pure_and_deterministic(event_type, arg_type, data):
    subtype = data.draw(st.sampled_from(SUBTYPE_LABELS[arg_type]))
    e = ev(event_type.value, 0, 3, (arg_type.value, subtype, 4, 6))
    inv = LabelInventory()
    first = validate_event(e, inv)
    assert validate_event(e, inv) == first
    ok = subtype != NULL and compatibility_table(inv)[event_type].required is arg_type
    assert (first == []) == ok
