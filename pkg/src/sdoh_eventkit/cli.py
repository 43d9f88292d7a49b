"""Command-line entry point: ``sdoh-eventkit <subcommand> ...``.

Every subcommand writes only below ``--output-dir``.  Settings may come from
a JSON file given with ``--config``; explicit flags override it.
Exit status is 0 on success, 1 when a stage fails and 2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import CHECKPOINT_FORMAT_VERSION, STANDOFF_FORMAT_VERSION, __version__
from .corpus_io import DEFAULT_HEADERS, read_corpus, read_manifest, write_corpus
from .schema import LabelInventory, validate_annotations

log = logging.getLogger("sdoh_eventkit")

SUBCOMMANDS = ("validate", "synth", "train", "predict", "score", "note-labels", "note-metrics", "compare", "report")
_MODEL_FLAGS = {
    "epochs": "epochs",
    "lr": "learning_rate",
    "hidden_dim": "hidden_dim",
    "width_dim": "width_embedding_dim",
    "max_span_width": "max_span_width",
    "neg_entities": "neg_entity_samples",
    "neg_relations": "neg_relation_samples",
    "relation_policy": "relation_candidate_policy",
    "encoder": "encoder",
}


class StageError(RuntimeError):
    pass


@dataclass
class RunConfig:
    command: str
    output_dir: Path
    inputs: dict[str, Path] = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    include_method: bool = False
    headers: tuple[str, ...] = DEFAULT_HEADERS
    year: int = 2021
    seed: int = 7
    threads: int = 1

    @property
    def inventory(self) -> LabelInventory:
        return LabelInventory(include_method=self.include_method)

    def validate_paths(self):
        for name, path in self.inputs.items():
            if not path.exists():
                raise StageError(f"--{name.replace('_', '-')}: path does not exist: {path}")

    def model_config(self):
        from .model import ModelConfig

        return ModelConfig.from_dict({**ModelConfig().to_dict(), "seed": self.seed, **self.model})


# --- stages ------------------------------------------------------------------


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump(path: Path, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_validate(cfg: RunConfig, args) -> int:
    corpus = read_corpus(cfg.inputs["corpus"], cfg.inventory, args.partition, cfg.headers)
    problems = []
    for doc, anns in corpus:
        for msg in validate_annotations(anns, doc.section_text, cfg.inventory):
            problems.append(f"{doc.id}: {msg}")
    for line in problems:
        print(line)
    summary = f"{len(corpus)} documents, {len(problems)} violations"
    print(summary)
    _write(cfg.output_dir / "validation.txt", "".join(p + "\n" for p in problems) + summary + "\n")
    return 1 if problems else 0


def cmd_synth(cfg: RunConfig, args) -> int:
    from .synth import default_grammar, generate_corpus, generate_structured_tables, load_grammar, write_structured_tables

    grammar = load_grammar(cfg.inputs["grammar"]) if "grammar" in cfg.inputs else default_grammar()
    n_patients = max(1, (2 * (args.docs + args.dev_docs)) // 3)
    train = generate_corpus(grammar, args.docs, seed=cfg.seed, name="train", n_patients=n_patients, year=cfg.year)
    dev = generate_corpus(
        grammar, args.dev_docs, seed=cfg.seed + 1, name="dev", id_prefix="dev", n_patients=n_patients, year=cfg.year
    )
    items = list(train) + list(dev)
    dev_ids = {doc.id for doc, _ in dev}
    write_corpus(cfg.output_dir / "corpus", items, lambda i: "dev" if i in dev_ids else "train")
    write_structured_tables(cfg.output_dir / "structured", generate_structured_tables(items, cfg.seed, cfg.year))
    print(f"wrote {len(train)} train + {len(dev)} dev documents to {cfg.output_dir / 'corpus'}")
    return 0


def _encoder(cfg: RunConfig):
    if "embeddings" not in cfg.inputs:
        return None
    from .model import FileEncoder

    return FileEncoder.from_file(cfg.inputs["embeddings"])


def cmd_train(cfg: RunConfig, args) -> int:
    from .model import save_checkpoint, train

    corpus = read_corpus(cfg.inputs["corpus"], cfg.inventory, args.partition, cfg.headers)
    config = cfg.model_config()
    history: list[float] = []
    params = train(corpus, config, cfg.inventory, encoder=_encoder(cfg), history=history)
    save_checkpoint(params, cfg.output_dir / "model.ckpt")
    lines = ["epoch,mean_loss"] + [f"{i + 1},{v:.6f}" for i, v in enumerate(history)]
    _write(cfg.output_dir / "loss_log.csv", "\n".join(lines) + "\n")
    _dump(cfg.output_dir / "train_config.json", config.to_dict())
    print(f"trained {config.epochs} epochs on {len(corpus)} documents; final loss {history[-1]:.4f}")
    return 0


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cmd_predict(cfg: RunConfig, args) -> int:
    from collections import Counter

    from .assembly import events_to_json, extract_events
    from .model import load_checkpoint

    params = load_checkpoint(cfg.inputs["checkpoint"])
    corpus = read_corpus(cfg.inputs["corpus"], params.inventory, args.partition, cfg.headers)
    encoder = _encoder(cfg)
    docs = [doc for doc, _ in corpus]
    counters = [Counter() for _ in docs]
    preds = _parallel_map(lambda k: extract_events(docs[k], params, encoder, counters[k]), range(len(docs)), cfg.threads)
    stats = sum(counters, Counter())
    out_dir = cfg.output_dir / "predictions"
    write_corpus(out_dir, list(zip(docs, preds)), lambda _: args.partition or "")
    _dump(cfg.output_dir / "events.json", [events_to_json(d, p) for d, p in zip(docs, preds)])
    _dump(cfg.output_dir / "predict_stats.json", dict(sorted(stats.items())))
    print(f"predicted {sum(len(p.events) for p in preds)} events in {len(docs)} documents")
    return 0


def cmd_score(cfg: RunConfig, args) -> int:
    from .scorer import alignment_debug, report, score_documents

    gold = read_corpus(cfg.inputs["gold"], cfg.inventory, args.partition, cfg.headers)
    pred = read_corpus(cfg.inputs["pred"], cfg.inventory, None, cfg.headers)
    gold_sets = [a for _, a in gold]
    pred_sets = [a for _, a in pred]
    if args.partition:
        # a partitioned gold corpus is scored against the matching predictions
        part_of = {row["id"]: row["partition"] for row in read_manifest(cfg.inputs["pred"])}
        wanted = {a.document_id for a in gold_sets}
        pred_sets = [a for a in pred_sets if a.document_id in wanted or part_of[a.document_id] == args.partition]
    alignments: dict = {}
    counts = score_documents(gold_sets, pred_sets, cfg.inventory, alignments)
    rep = report(counts)
    _write(cfg.output_dir / "score.json", rep.to_json() + "\n")
    _write(cfg.output_dir / "score.txt", rep.to_table())
    _dump(cfg.output_dir / "alignments.json", alignment_debug(gold_sets, pred_sets, alignments))
    m = rep.overall
    print(f"overall micro P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f}")
    return 0


def cmd_note_labels(cfg: RunConfig, args) -> int:
    from .notelevel import events_to_note_labels, write_label_csv

    corpus = read_corpus(cfg.inputs["corpus"], cfg.inventory, args.partition, cfg.headers)
    labels = {doc.id: events_to_note_labels(anns.events) for doc, anns in corpus}
    write_label_csv(cfg.output_dir / args.name, labels)
    print(f"wrote note labels for {len(labels)} documents")
    return 0


def cmd_note_metrics(cfg: RunConfig, args) -> int:
    from .notelevel import note_metrics, paired, read_label_csv

    gold, pred = paired(read_label_csv(cfg.inputs["gold_labels"]), read_label_csv(cfg.inputs["pred_labels"]))
    metrics = note_metrics(gold, pred)
    _write(cfg.output_dir / "note_metrics.json", metrics.to_json() + "\n")
    _write(cfg.output_dir / "note_metrics.txt", metrics.to_table())
    print(f"macro note-level F1={metrics.macro_f1:.4f} accuracy={metrics.macro_accuracy:.4f}")
    return 0


def cmd_compare(cfg: RunConfig, args) -> int:
    from .casestudy import (
        NormalizationLexicon,
        compare,
        ingest_structured,
        load_field_mapping,
        narrative_patients,
        normalize_substances,
        patient_indicators,
        stratify,
    )

    corpus = read_corpus(cfg.inputs["pred"], cfg.inventory, None, cfg.headers)
    docs = [doc for doc, _ in corpus]
    extracted = {doc.id: anns for doc, anns in corpus}
    records = ingest_structured(cfg.inputs["structured"], cfg.year)
    mapping = load_field_mapping(cfg.inputs.get("mapping"))
    indicators = patient_indicators(records, extracted, docs, cfg.year, mapping)
    comparison = compare(indicators, narrative_patients(docs, cfg.year))
    strat = stratify(extracted, docs, top_n=args.top_specialties)
    lexicon = NormalizationLexicon.load(cfg.inputs.get("lexicon"))
    substances = normalize_substances(list(corpus), lexicon)
    _write(cfg.output_dir / "comparison.json", comparison.to_json() + "\n")
    _write(cfg.output_dir / "comparison.txt", comparison.to_table())
    _dump(cfg.output_dir / "stratification.json", strat.to_dict())
    _write(cfg.output_dir / "stratification.txt", strat.to_table())
    _dump(cfg.output_dir / "substances.json", substances.to_dict())
    _write(cfg.output_dir / "substances.txt", substances.to_table())
    _dump(
        cfg.output_dir / "indicators.json",
        [{"patient_id": i.patient_id, "sdoh": i.sdoh, "source": i.source} for i in indicators],
    )
    print(f"compared {len(indicators)} patient indicators from {len(records)} structured records")
    return 0


REPORT_PARTS = (
    ("score", "score.json"),
    ("note_metrics", "note_metrics.json"),
    ("comparison", "comparison.json"),
    ("stratification", "stratification.json"),
    ("substances", "substances.json"),
    ("predict_stats", "predict_stats.json"),
    ("train_config", "train_config.json"),
)
REPORT_TEXT = ("score.txt", "note_metrics.txt", "comparison.txt", "stratification.txt", "substances.txt")


def cmd_report(cfg: RunConfig, args) -> int:
    source = cfg.inputs.get("inputs", cfg.output_dir)
    summary = {"toolkit_version": __version__}
    found = []
    for key, name in REPORT_PARTS:
        hits = sorted(source.rglob(name))
        if hits:
            summary[key] = json.loads(hits[0].read_text(encoding="utf-8"))
            found.append(str(hits[0].relative_to(source)))
    if not found:
        raise StageError(f"no report artifacts found under {source}")
    summary["artifacts"] = found
    _dump(cfg.output_dir / "summary.json", summary)
    sections = []
    for name in REPORT_TEXT:
        hits = sorted(source.rglob(name))
        if hits:
            sections.append(f"== {hits[0].relative_to(source)} ==\n{hits[0].read_text(encoding='utf-8')}")
    _write(cfg.output_dir / "summary.txt", "\n".join(sections))
    print(f"bundled {len(found)} artifacts into {cfg.output_dir / 'summary.json'}")
    return 0


HANDLERS = {
    "validate": cmd_validate,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "score": cmd_score,
    "note-labels": cmd_note_labels,
    "note-metrics": cmd_note_metrics,
    "compare": cmd_compare,
    "report": cmd_report,
}
# flag dest -> whether the stage requires it
PATH_FLAGS = {
    "validate": {"corpus": True},
    "synth": {"grammar": False},
    "train": {"corpus": True, "embeddings": False},
    "predict": {"checkpoint": True, "corpus": True, "embeddings": False},
    "score": {"gold": True, "pred": True},
    "note-labels": {"corpus": True},
    "note-metrics": {"gold_labels": True, "pred_labels": True},
    "compare": {"pred": True, "structured": True, "lexicon": False, "mapping": False},
    "report": {"inputs": False},
}


# --- argument parsing ----------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--output-dir", required=True, type=Path, help="directory receiving every artifact")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="worker cap for document-parallel stages")
    p.add_argument("--year", type=int, default=None, help="study year for case-study filters and synthetic dates")
    p.add_argument("--include-method", action="store_true", default=None, help="add Method to the label inventory")
    p.add_argument("--headers", default=None, help="comma-separated social-history section headers")
    p.add_argument("--partition", default=None, help="restrict to one manifest partition")


def _model_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--width-dim", type=int, default=None)
    p.add_argument("--max-span-width", type=int, default=None)
    p.add_argument("--neg-entities", type=int, default=None)
    p.add_argument("--neg-relations", type=int, default=None)
    p.add_argument("--relation-policy", choices=("entity_only", "entity_or_subtype"), default=None)
    p.add_argument("--encoder", choices=("toy", "file"), default=None)
    p.add_argument("--embeddings", type=Path, default=None, help="binary sidecar for the file encoder")


def build_parser() -> argparse.ArgumentParser:
    version = (
        f"sdoh-eventkit {__version__} "
        f"(checkpoint format {CHECKPOINT_FORMAT_VERSION}, standoff format {STANDOFF_FORMAT_VERSION})"
    )
    parser = argparse.ArgumentParser(prog="sdoh-eventkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version)
    parser.add_argument("--config", type=Path, default=None, help="JSON file of default settings")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("validate", help="check a corpus against the event schema")
    _common(p)
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("synth", help="write a synthetic gold corpus and structured tables")
    _common(p)
    p.add_argument("--docs", type=int, default=200, help="training documents")
    p.add_argument("--dev-docs", type=int, default=0, help="held-out documents")
    p.add_argument("--grammar", type=Path, default=None)

    p = sub.add_parser("train", help="fit a model and write a checkpoint plus loss log")
    _common(p)
    _model_flags(p)
    p.add_argument("--corpus", type=Path, required=True)

    p = sub.add_parser("predict", help="extract events with a trained checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--embeddings", type=Path, default=None)

    p = sub.add_parser("score", help="slot-filling evaluation of predictions against gold")
    _common(p)
    p.add_argument("--gold", type=Path, required=True)
    p.add_argument("--pred", type=Path, required=True)

    p = sub.add_parser("note-labels", help="derive note-level labels from a corpus")
    _common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--name", default="note_labels.csv", help="output file name")

    p = sub.add_parser("note-metrics", help="compare two note-label CSV files")
    _common(p)
    p.add_argument("--gold-labels", type=Path, required=True)
    p.add_argument("--pred-labels", type=Path, required=True)

    p = sub.add_parser("compare", help="structured vs extracted patient-level comparison")
    _common(p)
    p.add_argument("--pred", type=Path, required=True, help="predicted corpus directory")
    p.add_argument("--structured", type=Path, required=True, help="directory of structured CSV tables")
    p.add_argument("--lexicon", type=Path, default=None)
    p.add_argument("--mapping", type=Path, default=None)
    p.add_argument("--top-specialties", type=int, default=20)

    p = sub.add_parser("report", help="bundle existing artifacts into one summary")
    _common(p)
    p.add_argument("--inputs", type=Path, default=None, help="directory to collect from (default: output dir)")
    return parser


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise StageError("config file must hold a JSON object")
    return data


def resolve(args, file_cfg: dict) -> RunConfig:
    """Merge flags over the config file over built-in defaults."""

    def pick(name, default=None):
        value = getattr(args, name, None)
        if value is None:
            value = file_cfg.get(name, default)
        return value

    model = dict(file_cfg.get("model", {}))
    for flag, key in _MODEL_FLAGS.items():
        if getattr(args, flag, None) is not None:
            model[key] = getattr(args, flag)
    if model.get("encoder") == "file" or (getattr(args, "embeddings", None) and "encoder" not in model):
        model["encoder"] = "file"

    inputs = {}
    for name in PATH_FLAGS[args.command]:
        value = pick(name)
        if value is not None:
            inputs[name] = Path(value)
    headers = pick("headers")
    if isinstance(headers, str):
        headers = tuple(h.strip() for h in headers.split(",") if h.strip())
    threads = pick("threads") or os.cpu_count() or 1
    return RunConfig(
        command=args.command,
        output_dir=Path(args.output_dir),
        inputs=inputs,
        model=model,
        include_method=bool(pick("include_method", False)),
        headers=tuple(headers) if headers else DEFAULT_HEADERS,
        year=int(pick("year", 2021)),
        seed=int(pick("seed", 7)),
        threads=max(1, int(threads)),
    )


def _setup_logging():
    level_name = os.environ.get("SDOH_EVENTKIT_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = _load_config_file(args.config)
        unknown = set(file_cfg) - {"model", "seed", "threads", "year", "include_method", "headers", "partition"} - {
            k for flags in PATH_FLAGS.values() for k in flags
        }
        if unknown:
            parser.error(f"unknown config keys: {', '.join(sorted(unknown))}")
        if args.partition is None and "partition" in file_cfg:
            args.partition = file_cfg["partition"]
        cfg = resolve(args, file_cfg)
        cfg.validate_paths()
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, args)
    except (StageError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"sdoh-eventkit {args.command}: error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
