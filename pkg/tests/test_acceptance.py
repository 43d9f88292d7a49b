"""Acceptance suite: one test per criterion, each recording a pass/fail line.

Results are collected in ``conftest.ACCEPTANCE_RESULTS`` and printed in the
terminal summary, so a run of ``pytest -v`` ends with ten verdict lines.
"""

import itertools
import json
import time
from datetime import datetime

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from helpers import ev
from oracles import counts_for_matching, maximum_matchings, span_count, trigger_counts
from sdoh_eventkit.assembly import extract_events
from sdoh_eventkit.casestudy import (
    EXTRACTED,
    SDOH_INDICATORS,
    STRUCTURED,
    PatientIndicator,
    StructuredRecord,
    compare,
    patient_indicators,
)
from sdoh_eventkit.cli import main as cli_main
from sdoh_eventkit.corpus_io import Document, parse_standoff, serialize_standoff
from sdoh_eventkit.model import (
    ModelConfig,
    ModelParams,
    enumerate_spans,
    gradient_check,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from sdoh_eventkit.model.params import build_vocab
from sdoh_eventkit.model.training import prepare_corpus, sample_batch
from sdoh_eventkit.notelevel import NoteLabelSet, events_to_note_labels, note_metrics
from sdoh_eventkit.schema import AnnotationSet, LabelInventory
from sdoh_eventkit.scorer import report, score_documents, score_events
from sdoh_eventkit.synth import default_grammar, generate_corpus

INV = LabelInventory()


def record(number: int, passed: bool, detail: str):
    ACCEPTANCE_RESULTS[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, detail


# 1 ---------------------------------------------------------------------------------


def test_criterion_01_gradient_fidelity():
    cfg = ModelConfig(hidden_dim=8, width_embedding_dim=4, max_span_width=4, neg_entity_samples=6, neg_relation_samples=4)
    corpus = generate_corpus(default_grammar(), 20, seed=101)
    examples, _ = prepare_corpus(corpus, cfg, INV)
    vocab = build_vocab(t for e in examples for t in e.sentence.texts)
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for b in range(20):
        params = init_params(ModelConfig(**{**cfg.to_dict(), "seed": 1000 + b}), INV, vocab, dtype=np.float64)
        example = examples[int(rng.integers(len(examples)))]
        batch = sample_batch(example, cfg, INV, rng)
        worst = max(worst, gradient_check(params, batch, epsilon=1e-6, n_coords=200, seed=b))
    elapsed = time.perf_counter() - start
    record(1, worst < 1e-4 and elapsed < 60, f"max rel error {worst:.2e} over 20 batches in {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------------


def test_criterion_02_shape_contract():
    d, dw = 5, 3
    params = init_params(ModelConfig(hidden_dim=d, width_embedding_dim=dw, max_span_width=3), INV, ("<unk>",))
    t = params.tensors
    checks = {
        "entity input": t["entity.W"].shape == (11, 2 * d + dw),
        "subtype inputs": all(params.subtype_W(v).shape[1] == 2 * d + dw + 11 for v in INV.labeled_types),
        "relation input": t["relation.W"].shape == (2, 3 * d + 2 * dw),
        "label sets": (len(INV.entity_labels), len(INV.relation_labels)) == (11, 2),
        "subtype widths": [len(INV.subtype_labels[v]) for v in INV.labeled_types] == [4, 7, 5],
    }
    bad = dict(t)
    bad["subtype.TypeLiving.W"] = np.zeros((5, 2 * d + dw))
    try:
        ModelParams(params.config, INV, bad, params.vocab)
        checks["construction asserts"] = False
    except ValueError:
        checks["construction asserts"] = True
    failed = [k for k, ok in checks.items() if not ok]
    record(2, not failed, "all shape checks hold" if not failed else f"failed: {failed}")


# 3 ---------------------------------------------------------------------------------

TYPES = ["Tobacco", "Drug", "Alcohol"]


def _random_event(rng, start=None):
    t = TYPES[int(rng.integers(len(TYPES)))]
    s = int(rng.integers(0, 40)) if start is None else start
    e = s + int(rng.integers(1, 6))
    args = []
    if rng.random() < 0.7:
        args.append(("StatusTime", ["none", "current", "past"][int(rng.integers(3))], e + 1, e + 4))
    for _ in range(int(rng.integers(0, 3))):
        a = int(rng.integers(0, 50))
        args.append((["Amount", "Frequency", "Type"][int(rng.integers(3))], a, a + int(rng.integers(1, 4))))
    return ev(t, s, e, *args)


def _perturb(rng, event):
    """A prediction near a gold event: shifted trigger, some arguments changed."""
    shift = int(rng.integers(-2, 3))
    span = event.trigger.span
    start = max(0, span.start + shift)
    args = []
    for a in event.arguments:
        r = rng.random()
        if r < 0.2:
            continue
        if hasattr(a, "subtype"):
            sub = a.subtype if r < 0.8 else ["none", "current", "past"][int(rng.integers(3))]
            args.append((a.arg_type.value, sub, a.span.start, a.span.end))
        else:
            off = 0 if r < 0.8 else 1
            args.append((a.arg_type.value, a.span.start + off, a.span.end + off))
    return ev(event.event_type.value, start, max(start + 1, span.end + shift), *args)


def _same_type_overlap(a, b):
    return a.event_type is b.event_type and a.trigger.span.overlap(b.trigger.span) >= 1


def _admissible(gold, pred):
    for a, b in itertools.combinations(gold, 2):
        if _same_type_overlap(a, b):
            return False
        if any(_same_type_overlap(a, p) and _same_type_overlap(b, p) for p in pred):
            return False
    return True


def generate_scorer_fixtures(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        gold = [_random_event(rng) for _ in range(int(rng.integers(0, 5)))]
        pred = [_perturb(rng, g) for g in gold if rng.random() < 0.8]
        pred += [_random_event(rng) for _ in range(int(rng.integers(0, 5 - len(pred)))) if len(pred) < 4]
        pred = pred[:4]
        rng.shuffle(pred)
        if _admissible(gold, pred):
            out.append((gold, pred))
    return out


def test_criterion_03_scorer_oracle():
    fixtures = generate_scorer_fixtures(1000, seed=33)
    mismatches, ambiguous = [], 0
    for i, (gold, pred) in enumerate(fixtures):
        counts = score_events(gold, pred)
        best = maximum_matchings(gold, pred)
        if counts.total("Trigger") != trigger_counts(gold, pred, best[0]):
            mismatches.append((i, "trigger"))
        achievable = {counts_for_matching(gold, pred, m) for m in best}
        if len(achievable) > 1:
            ambiguous += 1
        if counts.overall() not in achievable:
            mismatches.append((i, "overall"))
        identity = report(score_documents([AnnotationSet("d", tuple(gold))], [AnnotationSet("d", tuple(gold))]))
        if identity.overall.f1 != 1.0:
            mismatches.append((i, "identity"))
    record(
        3,
        not mismatches,
        f"1000 fixtures, {len(mismatches)} mismatches; {ambiguous} with several optimal matchings of different argument credit",
    )


# 4 ---------------------------------------------------------------------------------


def test_criterion_04_hand_fixture():
    gold = AnnotationSet("d", (
        ev("Tobacco", 20, 27, ("StatusTime", "past", 28, 32), ("Amount", 30, 35)),
        ev("Alcohol", 0, 4, ("StatusTime", "none", 5, 7)),
    ))
    pred = AnnotationSet("d", (
        ev("Tobacco", 22, 29, ("StatusTime", "current", 28, 32), ("Amount", 30, 35)),
        ev("Alcohol", 0, 4, ("StatusTime", "none", 9, 12)),
        ev("Drug", 40, 44),
    ))
    m = report(score_documents([gold], [pred])).overall
    ok = (m.tp, m.fp, m.fn) == (4, 2, 1) and abs(m.f1 - 0.7273) <= 1e-4
    record(4, ok, f"tp={m.tp} fp={m.fp} fn={m.fn} F1={m.f1:.4f}")


# 5 ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_05_learnability():
    grammar = default_grammar()
    train_set = generate_corpus(grammar, 200, seed=7, name="train")
    dev_set = generate_corpus(grammar, 50, seed=8, name="dev", id_prefix="dev")
    cfg = ModelConfig(epochs=200, seed=7)
    start = time.perf_counter()
    params = train(train_set, cfg, INV)
    elapsed = time.perf_counter() - start
    preds = [extract_events(doc, params) for doc, _ in dev_set]
    m = report(score_documents([a for _, a in dev_set], preds)).overall
    ok = m.f1 >= 0.95 and elapsed < 300
    record(5, ok, f"dev micro-F1 {m.f1:.4f} (P {m.precision:.3f} R {m.recall:.3f}) after 200 epochs in {elapsed:.0f}s")


# 6 ---------------------------------------------------------------------------------


def test_criterion_06_round_trips(tmp_path):
    failures = []
    for doc, anns in generate_corpus(default_grammar(), 200, seed=7):
        text = serialize_standoff(doc, anns)
        _, back = parse_standoff(doc.full_text, text, INV, document_id=doc.id)
        if back != anns or serialize_standoff(doc, back) != text:
            failures.append(doc.id)
    small = generate_corpus(default_grammar(), 10, seed=7)
    cfg = ModelConfig(hidden_dim=8, width_embedding_dim=4, max_span_width=4, epochs=3, seed=5)
    first = train(small, cfg, INV)
    save_checkpoint(first, tmp_path / "a.ckpt")
    loaded = load_checkpoint(tmp_path / "a.ckpt")
    bitwise = all(
        loaded.tensors[k].tobytes() == first.tensors[k].tobytes() and loaded.tensors[k].dtype == first.tensors[k].dtype
        for k in first.names
    )
    save_checkpoint(loaded, tmp_path / "b.ckpt")
    save_checkpoint(train(small, cfg, INV), tmp_path / "c.ckpt")
    a, b, c = [(tmp_path / n).read_bytes() for n in ("a.ckpt", "b.ckpt", "c.ckpt")]
    ok = not failures and bitwise and a == b == c
    record(6, ok, f"standoff round-trip {200 - len(failures)}/200 docs; checkpoint bitwise={bitwise and a == b}; retrain bytes equal={a == c}")


# 7 ---------------------------------------------------------------------------------


def _doc_events(*items):
    """items are (event type, labeled arg, subtype, trigger start)."""
    return [ev(t, s, s + 3, (arg, sub, s + 4, s + 8)) for t, arg, sub, s in items]


TS, SE, TL = "StatusTime", "StatusEmploy", "TypeLiving"

# (gold events, predicted events) for ten documents
NOTE_FIXTURE = [
    (_doc_events(("Tobacco", TS, "current", 0), ("Alcohol", TS, "none", 20), ("Employment", SE, "employed", 40),
                 ("LivingStatus", TL, "alone", 60)),
     _doc_events(("Tobacco", TS, "current", 0), ("Alcohol", TS, "none", 20), ("Employment", SE, "employed", 40),
                 ("LivingStatus", TL, "alone", 60))),
    (_doc_events(("Tobacco", TS, "past", 0), ("Alcohol", TS, "none", 20), ("Employment", SE, "retired", 40)),
     _doc_events(("Tobacco", TS, "past", 0), ("Alcohol", TS, "none", 20), ("Employment", SE, "unemployed", 40))),
    (_doc_events(("Tobacco", TS, "none", 0), ("Alcohol", TS, "none", 20)),
     _doc_events(("Tobacco", TS, "none", 0))),
    # latest trigger wins on both sides: gold current, pred past
    (_doc_events(("Tobacco", TS, "past", 0), ("Tobacco", TS, "current", 30), ("LivingStatus", TL, "homeless", 60)),
     _doc_events(("Tobacco", TS, "current", 0), ("Tobacco", TS, "past", 30), ("LivingStatus", TL, "homeless", 60))),
    ([], _doc_events(("Tobacco", TS, "current", 0), ("Employment", SE, "student", 40))),
    (_doc_events(("Tobacco", TS, "past", 0), ("LivingStatus", TL, "with family", 60)),
     _doc_events(("LivingStatus", TL, "with others", 60))),
    ([], []),
    (_doc_events(("Tobacco", TS, "current", 0)), _doc_events(("Tobacco", TS, "current", 0))),
    (_doc_events(("Tobacco", TS, "none", 0)), _doc_events(("Tobacco", TS, "current", 0))),
    ([ev("Drug", 0, 3, ("Amount", 4, 8))], [ev("Drug", 0, 3)]),
]

# hand-computed: (correct, tp, fp, fn) per field over the ten documents
NOTE_EXPECTED = {
    "tobacco": (6, 4, 3, 3),
    "alcohol": (9, 2, 0, 1),
    "drug": (10, 0, 0, 0),
    "employment": (8, 1, 2, 1),
    "living": (9, 2, 1, 1),
}
NOTE_EXPECTED_PRF = {
    "tobacco": (4 / 7, 4 / 7, 4 / 7),
    "alcohol": (1.0, 2 / 3, 0.8),
    "drug": (1.0, 1.0, 1.0),
    "employment": (1 / 3, 1 / 2, 0.4),
    "living": (2 / 3, 2 / 3, 2 / 3),
}


def test_criterion_07_note_level():
    gold = [events_to_note_labels(g) for g, _ in NOTE_FIXTURE]
    pred = [events_to_note_labels(p) for _, p in NOTE_FIXTURE]
    mapping_ok = gold[3].tobacco == "current" and pred[3].tobacco == "past" and gold[9] == NoteLabelSet()
    metrics = note_metrics(gold, pred)
    wrong = []
    for name, (correct, tp, fp, fn) in NOTE_EXPECTED.items():
        fm = metrics.per_field[name]
        m = fm.metrics
        if (m.tp, m.fp, m.fn) != (tp, fp, fn) or fm.accuracy != correct / 10:
            wrong.append(name)
        if any(abs(got - want) > 1e-12 for got, want in zip((m.precision, m.recall, m.f1), NOTE_EXPECTED_PRF[name])):
            wrong.append(name)
    ok = mapping_ok and not wrong and metrics.per_field["drug"].metrics.empty
    record(7, ok, f"10 documents, 5 fields; mismatched fields: {sorted(set(wrong)) or 'none'}")


# 8 ---------------------------------------------------------------------------------


def _case_fixture():
    """Ten patients: A and B positive in structured data, B and C in notes, for every indicator."""
    patients = list("ABCDEFGHIJ")
    ts = datetime(2021, 5, 1)
    records = []
    for pid in patients:
        positive = pid in "AB"
        for column in ("alcohol_use", "tobacco_use", "drug_use"):
            records.append(StructuredRecord(pid, "social_history_table", column, positive, ts))
        if positive:
            records.append(StructuredRecord(pid, "employment_status", "status", "Full Time"))
            records.append(StructuredRecord(pid, "flowsheet", "housing_status", "homeless shelter", ts))
    docs, extracted = [], {}
    for pid in patients:
        doc_id = f"note-{pid}"
        text = "x" * 120
        docs.append(Document(doc_id, text, text, 0, pid, "2021-06-01", "progress", "Internal Medicine"))
        sub = "current" if pid in "BC" else "past"
        events = _doc_events(("Alcohol", TS, sub, 0), ("Tobacco", TS, sub, 20), ("Drug", TS, sub, 40))
        if pid in "BC":
            events += _doc_events(("Employment", SE, "unemployed", 60), ("LivingStatus", TL, "homeless", 80))
        else:
            events += _doc_events(("LivingStatus", TL, "alone", 80))
        extracted[doc_id] = AnnotationSet(doc_id, tuple(events))
    return records, extracted, docs


def test_criterion_08_case_study():
    records, extracted, docs = _case_fixture()
    indicators = patient_indicators(records, extracted, docs, 2021)
    report_ = compare(indicators, narrative={d.patient_id for d in docs})
    fixture_ok = all(
        (p.only_structured, p.only_extracted, p.both) == (1, 1, 1)
        and all(abs(v - 1 / 3) < 1e-12 for v in p.proportions().values())
        for p in report_.all_patients.values()
    ) and set(report_.all_patients) == set(SDOH_INDICATORS)

    rng = np.random.default_rng(88)
    violations = 0
    for _ in range(100):
        pids = [f"p{i}" for i in range(int(rng.integers(1, 15)))]
        rows = [
            PatientIndicator(pid, sdoh, src)
            for pid in pids
            for sdoh in SDOH_INDICATORS
            for src in (STRUCTURED, EXTRACTED)
            if rng.random() < 0.4
        ]
        rows += rows[: int(rng.integers(0, len(rows) + 1))]  # duplicates must not matter
        narrative = {pid for pid in pids if rng.random() < 0.6}
        rep = compare(rows, narrative)
        for sdoh in SDOH_INDICATORS:
            s = {r.patient_id for r in rows if r.sdoh == sdoh and r.source == STRUCTURED}
            e = {r.patient_id for r in rows if r.sdoh == sdoh and r.source == EXTRACTED}
            p, q = rep.all_patients[sdoh], rep.narrative_only[sdoh]
            full, restricted = rep.structured_counts[sdoh]
            if p.only_structured + p.only_extracted + p.both != len(s | e):
                violations += 1
            if q.union > p.union or restricted > full or q.only_structured + q.both > p.only_structured + p.both:
                violations += 1
    ok = fixture_ok and violations == 0
    record(8, ok, f"fixture both/only/only = 1/1/1 for all indicators: {fixture_ok}; randomized violations: {violations}/100 fixtures")


# 9 ---------------------------------------------------------------------------------


def test_criterion_09_span_enumeration():
    rng = np.random.default_rng(9)
    bad = 0
    for _ in range(1000):
        n, k = int(rng.integers(0, 60)), int(rng.integers(1, 12))
        spans = enumerate_spans(n, k)
        expected = sum(max(0, n - w + 1) for w in range(1, k + 1))
        if len(spans) != expected or expected != span_count(n, k) or len(set((s.start, s.width) for s in spans)) != expected:
            bad += 1
    record(9, bad == 0, f"1000 random (n, K) pairs, {bad} mismatches")


# 10 --------------------------------------------------------------------------------

PIPELINE_ARTIFACTS = (
    "synth/corpus/manifest.csv",
    "synth/structured/visits.csv",
    "train/model.ckpt",
    "train/loss_log.csv",
    "predict/events.json",
    "predict/predictions/manifest.csv",
    "score/score.json",
    "score/score.txt",
    "score/alignments.json",
    "notes/gold_labels.csv",
    "notes/pred_labels.csv",
    "notes/note_metrics.json",
    "compare/comparison.json",
    "compare/comparison.txt",
    "compare/stratification.json",
    "compare/substances.json",
    "report/summary.json",
)


@pytest.mark.slow
def test_criterion_10_end_to_end(tmp_path):
    root = tmp_path
    corpus = root / "synth" / "corpus"
    steps = [
        ["synth", "--output-dir", root / "synth", "--seed", 7, "--docs", 200, "--dev-docs", 50],
        ["train", "--output-dir", root / "train", "--corpus", corpus, "--partition", "train"],
        ["predict", "--output-dir", root / "predict", "--checkpoint", root / "train" / "model.ckpt",
         "--corpus", corpus, "--partition", "dev"],
        ["score", "--output-dir", root / "score", "--gold", corpus, "--pred", root / "predict" / "predictions",
         "--partition", "dev"],
        ["note-labels", "--output-dir", root / "notes", "--corpus", corpus, "--partition", "dev", "--name", "gold_labels.csv"],
        ["note-labels", "--output-dir", root / "notes", "--corpus", root / "predict" / "predictions", "--name", "pred_labels.csv"],
        ["note-metrics", "--output-dir", root / "notes", "--gold-labels", root / "notes" / "gold_labels.csv",
         "--pred-labels", root / "notes" / "pred_labels.csv"],
        ["compare", "--output-dir", root / "compare", "--pred", root / "predict" / "predictions",
         "--structured", root / "synth" / "structured"],
        ["report", "--output-dir", root / "report", "--inputs", root],
    ]
    start = time.perf_counter()
    codes = [cli_main([str(a) for a in step]) for step in steps]
    elapsed = time.perf_counter() - start
    missing = [a for a in PIPELINE_ARTIFACTS if not (root / a).exists()]
    f1 = json.loads((root / "score" / "score.json").read_text())["overall"]["f1"] if not missing else float("nan")
    ok = all(c == 0 for c in codes) and not missing and elapsed < 600
    record(10, ok, f"exit codes {codes}; {len(PIPELINE_ARTIFACTS) - len(missing)}/{len(PIPELINE_ARTIFACTS)} artifacts"
                   f"{' (missing ' + ', '.join(missing) + ')' if missing else ''}; "
                   f"dev F1 {f1:.3f}; {elapsed:.0f}s")
