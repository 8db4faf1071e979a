#!/usr/bin/env python
"""
Disappearing entity toolkit - command-line entry point for every pipeline stage
"""

import argparse
import hashlib
import json
import logging
import logging.config
import sys
from datetime import date
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

from dateutil.parser import isoparse
from pydantic import ValidationError

from . import __version__
from .config import ARTIFACT_STAGES, ARTIFACTS, DEFAULT_WORKERS, ERROR_MESSAGES, LOGGING_CONFIG
from .corpus_helper import CorpusIndex, IngestReport, iter_posts, ingest_posts, load_index, save_index
from .embedding_helper import (
    RefinedProvider,
    load_model,
    refine_for_day,
    refined_path,
    save_model,
    save_vectors,
    train_base,
)
from .errors import ArgumentError, ConfigError, InputFormatError, MissingArtifactError, ToolkitError
from .evaluation_helper import FORMATS, conll_score, parse_report, relative_recall, render_report
from .kb_helper import (
    DEFAULT_TYPE_MAPPING,
    filter_entities,
    load_entity_list,
    load_type_mapping,
    load_update_dates,
    write_entity_list,
)
from .models import Dataset, DetectedSpan, EntityRecord, PipelineConfig
from .supervision_helper import (
    collect_baseline_contexts,
    collect_dataset,
    dataset_statistics,
    entity_posts,
    read_conll,
    split_dataset,
    write_conll,
)
from .synth_helper import generate, load_world_spec, reference_pipeline_config, reference_world, write_world
from .tagger_helper import load_checkpoint, predict_tags, save_checkpoint, tag_posts, train

# Configure logging
logging.config.dictConfig(LOGGING_CONFIG)
logger = logging.getLogger('det_cli')


# -------------------------------------------------------------------------
# Configuration
# -------------------------------------------------------------------------

def load_pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    """Environment defaults, then the JSON config file, then command-line flags."""
    data: Dict[str, Any] = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise ConfigError(error=f"cannot read {args.config}: {e}")
    paths = dict(data.get("paths", {}))
    for key in ("corpus", "entities", "mapping", "update_dates", "base_corpus"):
        value = getattr(args, key, None)
        if value is not None:
            paths[key] = value
    if args.out is not None:
        paths["output_dir"] = args.out
    data["paths"] = paths
    corpus = dict(data.get("corpus", {}))
    if getattr(args, "language", None) is not None:
        corpus["language"] = args.language
    if getattr(args, "fold_case", None) is not None:
        corpus["fold_case"] = args.fold_case
    if getattr(args, "exclude_rt", None):
        corpus["exclude_rt"] = True
    data["corpus"] = corpus
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        config = PipelineConfig(**data)
        # Every stage derives its randomness from the global seed.
        config = config.model_copy(update={
            "supervision": config.supervision.model_copy(update={"seed": config.seed}),
            "embeddings": config.embeddings.model_copy(update={"seed": config.seed}),
            "tagger": config.tagger.model_copy(update={"seed": config.seed}),
        })
    except ValidationError as e:
        raise ConfigError(error=str(e))
    for key in ("corpus", "entities", "mapping", "update_dates", "base_corpus"):
        path = getattr(config.paths, key)
        if path is not None and not Path(path).exists():
            raise ConfigError(ERROR_MESSAGES['missing_input'].format(key=f"paths.{key}", path=path))
    return config


def config_digest(config: PipelineConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _digests(paths: Iterable[Path]) -> Dict[str, str]:
    found: Dict[str, str] = {}
    for path in paths:
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for file in files:
            found[file.as_posix()] = file_digest(file)
    return dict(sorted(found.items()))


def write_manifest(config: PipelineConfig, stage: str, inputs: Iterable[Path], outputs: Iterable[Path]) -> Path:
    """Record what a stage read and wrote; no timestamps, so reruns match byte for byte."""
    manifest = {
        "stage": stage,
        "version": __version__,
        "seed": config.seed,
        "config_sha256": config_digest(config),
        "inputs": _digests(inputs),
        "outputs": _digests(outputs),
    }
    path = artifact(config, "manifests") / f"{stage}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def artifact(config: PipelineConfig, key: str) -> Path:
    return Path(config.paths.output_dir) / ARTIFACTS[key]


def require(config: PipelineConfig, key: str) -> Path:
    path = artifact(config, key)
    if not path.exists():
        raise MissingArtifactError(path=path, stage=ARTIFACT_STAGES.get(key, key))
    return path


def require_input(config: PipelineConfig, key: str) -> Path:
    path = getattr(config.paths, key)
    if path is None:
        raise ConfigError(error=f"paths.{key} is required for this stage (flag --{key.replace('_', '-')})")
    return Path(path)


def _load_index(config: PipelineConfig, workers: int) -> CorpusIndex:
    return load_index(require(config, "index_posts"), config.corpus, workers)


def _load_entities(config: PipelineConfig) -> List[EntityRecord]:
    return load_entity_list(require(config, "entities"), _mapping(config))


def _mapping(config: PipelineConfig):
    return load_type_mapping(config.paths.mapping) if config.paths.mapping else DEFAULT_TYPE_MAPPING


def _write_jsonl(rows: Iterable[str], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(row + "\n")


def _emit(text: str, out_file: Optional[str]) -> None:
    if out_file:
        Path(out_file).parent.mkdir(parents=True, exist_ok=True)
        Path(out_file).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -------------------------------------------------------------------------
# Stages
# -------------------------------------------------------------------------

def cmd_ingest(config: PipelineConfig, args: argparse.Namespace) -> None:
    source = require_input(config, "corpus")
    index, report = ingest_posts(source, config.corpus, args.workers)
    posts_path, report_path = artifact(config, "index_posts"), artifact(config, "index_report")
    save_index(index, report, posts_path, report_path)
    write_manifest(config, "ingest", [source], [posts_path, report_path])


def cmd_entities(config: PipelineConfig, args: argparse.Namespace) -> None:
    source = require_input(config, "entities")
    index = _load_index(config, args.workers)
    records = load_entity_list(source, _mapping(config))
    kept = filter_entities(records, index, config.type_caps, config.seed)
    logger.info(f"Kept {len(kept)} of {len(records)} entities")
    out = artifact(config, "entities")
    write_entity_list(kept, out)
    inputs = [source, artifact(config, "index_posts")] + ([config.paths.mapping] if config.paths.mapping else [])
    write_manifest(config, "entities", inputs, [out])


def cmd_supervise(config: PipelineConfig, args: argparse.Namespace) -> None:
    index = _load_index(config, args.workers)
    entities = _load_entities(config)
    sentences = collect_dataset(entities, index, config.supervision)
    dataset = split_dataset(sentences, config.supervision)
    outputs = {key: artifact(config, key) for key in ("supervision", "train", "dev", "test", "supervision_stats")}
    write_conll(sentences, outputs["supervision"])
    for split in ("train", "dev", "test"):
        write_conll(getattr(dataset, split), outputs[split])
    stats = dataset_statistics(sentences)
    outputs["supervision_stats"].write_text(render_report(stats, "json"), encoding="utf-8")
    logger.info(
        f"Collected {len(sentences)} sentences: {len(dataset.train)} train, "
        f"{len(dataset.dev)} dev, {len(dataset.test)} test"
    )
    write_manifest(config, "supervise", [artifact(config, "index_posts"), artifact(config, "entities")], outputs.values())


def cmd_supervise_baseline(config: PipelineConfig, args: argparse.Namespace) -> None:
    index = _load_index(config, args.workers)
    cutoff = args.cutoff if args.cutoff is not None else config.supervision.train_years[1]
    sentences = []
    for entity in _load_entities(config):
        if entity.disappearance_year > cutoff:
            continue
        positives, negatives = collect_baseline_contexts(entity, index, cutoff, config.seed)
        sentences.extend(positives + negatives)
    sentences.sort(key=lambda s: s.sort_key)
    out = artifact(config, "baseline")
    write_conll(sentences, out)
    logger.info(f"Collected {len(sentences)} last-burst sentences through {cutoff}")
    write_manifest(config, "supervise-baseline", [artifact(config, "index_posts"), artifact(config, "entities")], [out])


def cmd_train_embeddings(config: PipelineConfig, args: argparse.Namespace) -> None:
    if config.paths.base_corpus:
        inputs = [Path(config.paths.base_corpus)]
        corpus = list(iter_posts(config.paths.base_corpus, IngestReport()))
    else:
        # Without a dedicated pre-period corpus, use everything before the test year.
        inputs = [require(config, "index_posts")]
        cutoff = date(config.supervision.test_year, 1, 1)
        corpus = [p for p in _load_index(config, args.workers).iter_posts() if p.day < cutoff]
    model = train_base(corpus, config.embeddings, show_progress=args.progress)
    binary, text = artifact(config, "base_vectors"), artifact(config, "base_vectors_text")
    save_model(model, binary)
    save_vectors(model, text)
    write_manifest(config, "train-embeddings", inputs, [binary, text])


def _dataset_days(config: PipelineConfig) -> List[date]:
    days = set()
    for split in ("train", "dev", "test"):
        days.update(s.date for s in read_conll(require(config, split)))
    return sorted(days)


def cmd_refine_embeddings(config: PipelineConfig, args: argparse.Namespace) -> None:
    base_path = require(config, "base_vectors")
    base = load_model(base_path)
    index = _load_index(config, args.workers)
    if args.all_dataset_days:
        days = _dataset_days(config)
    elif args.day:
        days = sorted({isoparse(d).date() for d in args.day})
    else:
        raise ArgumentError("refine-embeddings needs --day or --all-dataset-days")
    directory = artifact(config, "refined_dir")
    outputs = []
    for day in days:
        refined = refine_for_day(base, index.posts_on_day(day), config.embeddings, day)
        path = refined_path(directory, day)
        save_model(refined, path, with_output=False)
        outputs.append(path)
    logger.info(f"Refined embeddings for {len(days)} days")
    write_manifest(config, "refine-embeddings", [base_path, artifact(config, "index_posts")], outputs)


def _provider(config: PipelineConfig, base, index: Optional[CorpusIndex]) -> RefinedProvider:
    return RefinedProvider(directory=artifact(config, "refined_dir"), base=base, index=index)


def _tagger_key(args: argparse.Namespace) -> str:
    if getattr(args, "data", "tds") == "baseline":
        return "tagger_baseline"
    return "tagger_no_refined" if getattr(args, "no_refined", False) else "tagger"


def cmd_train_tagger(config: PipelineConfig, args: argparse.Namespace) -> None:
    base_path = require(config, "base_vectors")
    base = load_model(base_path)
    index = _load_index(config, args.workers)
    if args.data == "baseline":
        inputs = [require(config, "baseline"), require(config, "test")]
        split = split_dataset(read_conll(inputs[0]), config.supervision)
        dataset = Dataset(train=split.train, dev=split.dev, test=read_conll(inputs[1]))
    else:
        inputs = [require(config, "train"), require(config, "dev"), require(config, "test")]
        dataset = Dataset(train=read_conll(inputs[0]), dev=read_conll(inputs[1]), test=read_conll(inputs[2]))
    model, log = train(
        dataset, base, _provider(config, base, index), config.tagger,
        use_refined=not args.no_refined, show_progress=args.progress,
    )
    out = Path(args.tagger) if args.tagger else artifact(config, _tagger_key(args))
    save_checkpoint(model, out)
    log_path = out.with_name(f"{out.stem}-log.json")
    log_path.write_text(json.dumps(log.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    stage = "train-tagger" + ("-baseline" if args.data == "baseline" else "") + ("-no-refined" if args.no_refined else "")
    write_manifest(config, stage, inputs + [base_path, artifact(config, "index_posts")], [out, log_path])


def _load_tagger(config: PipelineConfig, args: argparse.Namespace):
    if args.tagger:
        path = Path(args.tagger)
        if not path.exists():
            raise MissingArtifactError(path=path, stage="train-tagger")
        return path, load_checkpoint(path)
    path = require(config, _tagger_key(args))
    return path, load_checkpoint(path)


def _test_year_targets(config: PipelineConfig, year: int) -> List[EntityRecord]:
    return [e for e in _load_entities(config) if e.disappearance_year == year]


def cmd_tag(config: PipelineConfig, args: argparse.Namespace) -> None:
    tagger_path, model = _load_tagger(config, args)
    base_path = require(config, "base_vectors")
    base = load_model(base_path)
    year = args.year or config.supervision.test_year
    if args.input:
        inputs = [Path(args.input)]
        index, _ = ingest_posts(args.input, config.corpus, args.workers)
        posts = list(index.iter_posts())
    else:
        inputs = [require(config, "index_posts"), require(config, "entities")]
        index = _load_index(config, args.workers)
        days = [d for d in index.days() if d.year == year]
        selected: Dict[str, Any] = {}
        for entity in _test_year_targets(config, year):
            for post in entity_posts(index, entity, days):
                selected[post.id] = post
        posts = sorted(selected.values(), key=lambda p: (p.timestamp, p.id))
    logger.info(f"Tagging {len(posts)} posts")
    detections = tag_posts(model, posts, base, _provider(config, base, index))
    out = artifact(config, "detections")
    _write_jsonl((span.model_dump_json() for spans in detections for span in spans), out)
    write_manifest(config, "tag", inputs + [tagger_path, base_path], [out])


def _read_detections(path: Path) -> List[DetectedSpan]:
    spans = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                spans.append(DetectedSpan.model_validate_json(line))
            except ValidationError as e:
                raise InputFormatError(path=path, line=line_no, problem=str(e))
    return spans


def cmd_evaluate(config: PipelineConfig, args: argparse.Namespace) -> None:
    if args.mode == "conll":
        gold_path = Path(args.gold) if args.gold else require(config, "test")
        gold = read_conll(gold_path)
        inputs = [gold_path]
        if args.pred:
            predicted = [s.tags for s in read_conll(args.pred)]
            inputs.append(Path(args.pred))
        else:
            tagger_path, model = _load_tagger(config, args)
            base_path = require(config, "base_vectors")
            base = load_model(base_path)
            index = _load_index(config, args.workers) if artifact(config, "index_posts").exists() else None
            predicted = [tags for tags, _ in predict_tags(model, gold, base, _provider(config, base, index))]
            inputs += [tagger_path, base_path]
        report = conll_score(gold, predicted)
        out = artifact(config, "conll_report")
        outputs = [out]
    else:
        year = args.year or config.supervision.test_year
        detections_path = require(config, "detections")
        inputs = [detections_path, require(config, "entities")]
        updates = {}
        if config.paths.update_dates:
            updates = load_update_dates(config.paths.update_dates)
            inputs.append(Path(config.paths.update_dates))
        report, events = relative_recall(
            _read_detections(detections_path), _test_year_targets(config, year), year,
            updates, config.corpus.fold_case, args.match_type,
        )
        out = artifact(config, "immediacy_report")
        events_path = artifact(config, "detection_events")
        _write_jsonl((e.model_dump_json() for e in events), events_path)
        outputs = [out, events_path]
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(render_report(report, "json"), encoding="utf-8")
    _emit(render_report(report, args.format), args.out_file)
    write_manifest(config, f"evaluate-{args.mode}", inputs, outputs)


def cmd_synth(config: PipelineConfig, args: argparse.Namespace) -> None:
    if args.spec:
        spec = load_world_spec(args.spec)
    else:
        spec = reference_world(
            seed=config.seed,
            cue_mode=args.cue_mode,
            cue_probability=args.cue_probability,
            emergence_burst_multiplier=args.emergence,
        )
    world_dir = Path(args.world_dir) if args.world_dir else artifact(config, "world")
    paths = write_world(generate(spec), world_dir)
    pipeline = reference_pipeline_config(world_dir, Path(config.paths.output_dir), config.seed)
    config_path = world_dir / "config.json"
    config_path.write_text(json.dumps(pipeline.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote synthetic world to {world_dir}; run later stages with --config {config_path}")
    write_manifest(config, "synth", [args.spec] if args.spec else [], list(paths.values()) + [config_path])


def cmd_report(config: PipelineConfig, args: argparse.Namespace) -> None:
    path = Path(args.path)
    if not path.exists():
        raise MissingArtifactError(path=path, stage="evaluate")
    try:
        report = parse_report(path.read_text(encoding="utf-8"))
    except (ValueError, ValidationError) as e:
        raise InputFormatError(path=path, line=1, problem=str(e))
    _emit(render_report(report, args.format), args.out_file)


COMMANDS: Dict[str, Callable[[PipelineConfig, argparse.Namespace], None]] = {
    "ingest": cmd_ingest,
    "entities": cmd_entities,
    "supervise": cmd_supervise,
    "supervise-baseline": cmd_supervise_baseline,
    "train-embeddings": cmd_train_embeddings,
    "refine-embeddings": cmd_refine_embeddings,
    "train-tagger": cmd_train_tagger,
    "tag": cmd_tag,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
    "report": cmd_report,
}


# -------------------------------------------------------------------------
# Argument parsing
# -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="det-toolkit",
        description="Detect disappearing entities in timestamped posts",
    )
    parser.add_argument("--config", help="JSON pipeline config (keys: paths, corpus, supervision, embeddings, tagger, seed)")
    parser.add_argument("--out", help="Output directory for artifacts")
    parser.add_argument("--seed", type=int, help="Global seed")
    parser.add_argument("--workers", type=int, default=DEFAULT_WORKERS, help="Worker threads for corpus indexing")
    parser.add_argument("--log-level", help="Override the log level (DEBUG, INFO, ...)")
    parser.add_argument("--progress", action="store_true", help="Show progress bars on standard error")
    parser.add_argument("--corpus", help="Posts JSONL")
    parser.add_argument("--entities", help="Ended-entity TSV")
    parser.add_argument("--mapping", help="Category to type mapping TSV")
    parser.add_argument("--update-dates", dest="update_dates", help="KB update dates TSV")
    parser.add_argument("--base-corpus", dest="base_corpus", help="Pre-period posts JSONL for base embeddings")
    parser.add_argument("--language", help="Corpus language; picks the case-folding default (on for en, off for ja)")
    parser.add_argument("--fold-case", dest="fold_case", action="store_true", default=None, help="Match aliases case-insensitively")
    parser.add_argument("--no-fold-case", dest="fold_case", action="store_false", help="Match aliases case-sensitively")
    parser.add_argument("--exclude-rt", dest="exclude_rt", action="store_true", help="Do not count retweets in daily series")

    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "entities", "supervise", "train-embeddings"):
        sub.add_parser(name)

    baseline = sub.add_parser("supervise-baseline")
    baseline.add_argument("--cutoff", type=int, help="Last calendar year the last-burst search may use")

    refine = sub.add_parser("refine-embeddings")
    group = refine.add_mutually_exclusive_group()
    group.add_argument("--day", action="append", help="Day to refine (YYYY-MM-DD); repeatable")
    group.add_argument("--all-dataset-days", action="store_true", help="Refine every day present in train/dev/test")

    trainer = sub.add_parser("train-tagger")
    trainer.add_argument("--no-refined", action="store_true", help="Train without the refined-embedding stack")
    trainer.add_argument("--data", choices=("tds", "baseline"), default="tds", help="Training supervision")
    trainer.add_argument("--tagger", help="Checkpoint path to write")

    tagger = sub.add_parser("tag")
    tagger.add_argument("--input", help="Posts JSONL to tag (default: test-year posts mentioning KB entities)")
    tagger.add_argument("--year", type=int, help="Year whose posts are tagged")
    tagger.add_argument("--tagger", help="Checkpoint to use")
    tagger.add_argument("--no-refined", action="store_true", help="Use the checkpoint trained without refined vectors")
    tagger.add_argument("--data", choices=("tds", "baseline"), default="tds")

    evaluate = sub.add_parser("evaluate")
    evaluate.add_argument("--mode", choices=("conll", "immediacy"), required=True)
    evaluate.add_argument("--gold", help="Gold CoNLL (default: the test split)")
    evaluate.add_argument("--pred", help="Predicted CoNLL (default: run the tagger on the gold sentences)")
    evaluate.add_argument("--tagger", help="Checkpoint to use")
    evaluate.add_argument("--no-refined", action="store_true")
    evaluate.add_argument("--data", choices=("tds", "baseline"), default="tds")
    evaluate.add_argument("--year", type=int, help="Target year for immediacy")
    evaluate.add_argument("--match-type", action="store_true", help="Require the predicted type to match the KB type")
    evaluate.add_argument("--format", choices=FORMATS, default="text")
    evaluate.add_argument("--out-file", help="Write the rendered report here instead of standard output")

    synth = sub.add_parser("synth")
    synth.add_argument("--spec", help="WorldSpec JSON (default: the reference world)")
    synth.add_argument("--world-dir", help="Where to write the world (default: <out>/world)")
    synth.add_argument("--cue-mode", choices=("inline", "siblings"), default="inline")
    synth.add_argument("--cue-probability", type=float, default=1.0)
    synth.add_argument("--emergence", type=float, default=0.0, help="Emergence burst multiplier on birth days")

    report = sub.add_parser("report")
    report.add_argument("path", help="Stored report or statistics JSON")
    report.add_argument("--format", choices=FORMATS, default="text")
    report.add_argument("--out-file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        for name in LOGGING_CONFIG['loggers']:
            logging.getLogger(name).setLevel(args.log_level.upper())
    try:
        config = load_pipeline_config(args)
        logger.info(f"Running {args.command} (seed {config.seed}, output {config.paths.output_dir})")
        COMMANDS[args.command](config, args)
    except ToolkitError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error in {args.command}: {str(e)}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
