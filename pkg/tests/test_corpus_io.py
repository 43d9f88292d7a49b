import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import ev
from sdoh_eventkit.corpus_io import (
    CorpusPartition,
    Document,
    StandoffError,
    extract_social_history,
    latest_social_history,
    make_document,
    parse_standoff,
    read_corpus,
    serialize_standoff,
    tokenize,
    write_corpus,
)
from sdoh_eventkit.schema import AnnotationSet, LabeledArg, LabeledArgType, Span
from sdoh_eventkit.synth import default_grammar, generate_corpus

ONE_EVENT = "T1\tTobacco 0 7\tsmoking\nT2\tStatusTime 9 15\tdenies\nA1\tStatusTimeVal T2 none\nE1\tTobacco:T1 Status:T2\n"


def test_extract_between_headers():
    text = "HPI: cough\nSOCIAL HISTORY:\nTobacco: denies\nMEDICATIONS:\nnone\n"
    section, offset = extract_social_history(text)
    assert section == "Tobacco: denies"
    assert text[offset:offset + len(section)] == section
    assert offset == text.index("Tobacco")


def test_extract_absent_and_case_insensitive():
    assert extract_social_history("ASSESSMENT: stable") is None
    text = "PLAN: rest\nsocial history: lives alone"
    section, offset = extract_social_history(text)
    assert section == "lives alone"
    assert offset == len(text) - len("lives alone")


def test_extract_custom_headers():
    assert extract_social_history("LIFESTYLE: smokes", headers=("LIFESTYLE",)) == ("smokes", 11)
    assert extract_social_history("SHX: smokes") == ("smokes", 5)


@given(st.text(alphabet="abc XYZ:\n", max_size=60), st.sampled_from(["SOCIAL HISTORY", "shx", "Social Hx"]))
def test_extract_is_substring(prefix, header):
    text = prefix + "\n" + header + ": drinks beer\nPLAN: none"
    found = extract_social_history(text)
    assert found is not None
    section, offset = found
    assert text[offset:offset + len(section)] == section


def test_document_invariant():
    with pytest.raises(ValueError):
        Document("d", "abc", "x", 0)


def test_tokenize_examples():
    tok = tokenize("Tobacco: denies")
    assert [t.text for t in tok.tokens] == ["Tobacco", ":", "denies"]
    assert [(t.span.start, t.span.end) for t in tok.tokens] == [(0, 7), (7, 8), (9, 15)]
    empty = tokenize("")
    assert empty.tokens == () and empty.sentences == ()
    quit_ = tokenize("quit 2yrs ago.")
    assert [t.text for t in quit_.tokens] == ["quit", "2yrs", "ago", "."]
    assert quit_.sentences == ((0, 4),)


def test_sentence_splitting():
    tok = tokenize("Smokes daily; drinks wine.\nLives with Dr. Smith")
    texts = [" ".join(t.text for t in tok.sentence_tokens(i)) for i in range(len(tok.sentences))]
    assert texts == ["Smokes daily ;", "drinks wine .", "Lives with Dr . Smith"]
    assert tokenize("1.5 ppd").tokens[0].text == "1.5"


@given(st.text(alphabet=st.characters(codec="utf-8", exclude_categories=("Cs",)), max_size=80))
def test_tokens_cover_non_whitespace(text):
    tok = tokenize(text)
    covered = set()
    prev_end = 0
    for t in tok.tokens:
        assert t.span.start >= prev_end
        assert text[t.span.start:t.span.end] == t.text
        assert text[prev_end:t.span.start].strip() == ""
        covered.update(range(t.span.start, t.span.end))
        prev_end = t.span.end
    assert text[prev_end:].strip() == ""
    for lo, hi in tok.sentences:
        assert hi > lo


def test_parse_example(inv):
    text = "smoking, denies it"
    doc, anns = parse_standoff(text, ONE_EVENT, inv)
    assert len(anns.events) == 1
    event = anns.events[0]
    assert event.arguments == (LabeledArg(LabeledArgType.STATUS_TIME, "none", Span(9, 15)),)
    assert not event.incomplete


def test_parse_errors(inv):
    with pytest.raises(StandoffError, match="span out of range: line 1"):
        parse_standoff("x" * 20, "T1\tTobacco 0 99\tsmoking\n", inv)
    with pytest.raises(StandoffError, match="Smoking"):
        parse_standoff("x" * 20, "T1\tSmoking 0 5\tx\n", inv)
    with pytest.raises(StandoffError, match="malformed line 2"):
        parse_standoff("x" * 20, "T1\tTobacco 0 5\tx\nT2\tTobacco five 7\n", inv)
    with pytest.raises(StandoffError, match="Method"):
        parse_standoff("x" * 20, "T1\tMethod 0 5\tx\n", inv)


def test_parse_empty(inv):
    doc, anns = parse_standoff("anything", "", inv, document_id="d1")
    assert anns == AnnotationSet("d1")


def test_serialize_example(inv):
    text = "smoking, denies it"
    doc, anns = parse_standoff(text, ONE_EVENT, inv)
    assert serialize_standoff(doc, anns) == ONE_EVENT
    assert serialize_standoff(doc, AnnotationSet("d")) == ""


def test_serialize_event_order_and_orphans(inv):
    text = "Drinks wine. Smokes 1 ppd. Works."
    doc = make_document("d", text)
    anns = AnnotationSet(
        "d",
        (ev("Tobacco", 13, 19, ("Amount", 20, 25)), ev("Alcohol", 0, 6, ("Type", 7, 11))),
    )
    out = serialize_standoff(doc, anns)
    e_lines = [line for line in out.splitlines() if line.startswith("E")]
    assert e_lines[0].startswith("E1\tAlcohol") and e_lines[1].startswith("E2\tTobacco")
    _, back = parse_standoff(text, out, inv)
    assert back.events == tuple(sorted(anns.events, key=lambda e: e.trigger.span.start))


def test_orphans_round_trip(inv):
    text = "Works as a nurse."
    ann = "T1\tType 11 16\tnurse\nT2\tStatusEmploy 0 5\tWorks\nA1\tStatusEmployVal T2 employed\n"
    doc, anns = parse_standoff(text, ann, inv)
    assert anns.events == ()
    assert len(anns.orphan_entities) == 2
    doc2, anns2 = parse_standoff(text, serialize_standoff(doc, anns), inv)
    assert set(anns2.orphan_entities) == set(anns.orphan_entities)


def test_repeated_roles_round_trip(inv):
    text = "Smokes cigars and cigarettes"
    doc = make_document("d", text)
    anns = AnnotationSet("d", (ev("Tobacco", 0, 6, ("Type", 7, 13), ("Type", 18, 28)),))
    out = serialize_standoff(doc, anns)
    assert "Type2:" in out
    assert parse_standoff(text, out, inv, document_id="d")[1] == anns


def test_offsets_relative_to_section(inv):
    text = "HPI: cough\nSOCIAL HISTORY: denies tobacco\n"
    doc = make_document("d", text)
    anns = AnnotationSet("d", (ev("Tobacco", 7, 14, ("StatusTime", "none", 0, 6)),))
    out = serialize_standoff(doc, anns)
    assert f"Tobacco {doc.section_offset + 7} {doc.section_offset + 14}\ttobacco" in out
    assert parse_standoff(text, out, inv, document_id="d")[1] == anns


def test_synthetic_round_trip(inv):
    for doc, anns in generate_corpus(default_grammar(), 40, seed=11):
        doc2, anns2 = parse_standoff(
            doc.full_text, serialize_standoff(doc, anns), inv, document_id=doc.id,
            patient_id=doc.patient_id, timestamp=doc.timestamp, note_type=doc.note_type, specialty=doc.specialty,
        )
        assert doc2 == doc
        assert anns2 == anns


def test_corpus_directory_round_trip(tmp_path, inv):
    corpus = generate_corpus(default_grammar(), 6, seed=2)
    write_corpus(tmp_path, corpus, lambda i: "train")
    back = read_corpus(tmp_path, inv, "train")
    assert [(d, a) for d, a in back] == [(d, a) for d, a in corpus]
    assert len(read_corpus(tmp_path, inv, "dev")) == 0


def test_partition_rejects_duplicates():
    doc = make_document("d", "text")
    with pytest.raises(ValueError):
        CorpusPartition("train", [(doc, AnnotationSet("d")), (doc, AnnotationSet("d"))])


def test_latest_social_history():
    def d(i, pid, ts, kind):
        return make_document(i, "x", patient_id=pid, timestamp=ts, note_type=kind), AnnotationSet(i)

    items = [
        d("a", "p1", "2021-01-01", "social_history"),
        d("b", "p1", "2021-05-01", "social_history"),
        d("c", "p1", "2021-02-01", "progress"),
        d("e", "p2", "2021-03-01", "social_history"),
    ]
    assert [doc.id for doc, _ in latest_social_history(items)] == ["b", "c", "e"]
