#!/usr/bin/env python
"""
Configuration settings for the disappearing entity toolkit
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Base directory
BASE_DIR = Path(__file__).parent

# Pipeline settings
DEFAULT_SEED = int(os.getenv("DET_SEED", "42"))
DEFAULT_OUTPUT_DIR = Path(os.getenv("DET_OUTPUT_DIR", "det_output"))
DEFAULT_WORKERS = int(os.getenv("DET_WORKERS", "1"))
LOG_LEVEL = os.getenv("DET_LOG_LEVEL", "INFO")

# Corpus settings
_FOLD_CASE_ENV = os.getenv("DET_FOLD_CASE")
# Unset: decided by the corpus language
DEFAULT_FOLD_CASE = None if _FOLD_CASE_ENV is None else _FOLD_CASE_ENV not in ("0", "false", "False")
DEFAULT_EXCLUDE_RT = os.getenv("DET_EXCLUDE_RT", "0") in ("1", "true", "True")
DEFAULT_MAX_NGRAM = int(os.getenv("DET_MAX_NGRAM", "6"))
DEFAULT_LANG = os.getenv("DET_LANG", "en")
# Corpus languages matched case-sensitively unless fold_case is set
CASELESS_LANGUAGES = ("ja",)

# Artifact names inside the output directory
ARTIFACTS = {
    'index_posts': 'corpus/posts.jsonl',
    'index_report': 'corpus/ingest_report.json',
    'entities': 'kb/entities.tsv',
    'supervision': 'supervision/tds.conll',
    'supervision_stats': 'supervision/tds_stats.json',
    'baseline': 'supervision/baseline.conll',
    'train': 'supervision/train.conll',
    'dev': 'supervision/dev.conll',
    'test': 'supervision/test.conll',
    'base_vectors': 'embeddings/base.bin',
    'base_vectors_text': 'embeddings/base.vec',
    'refined_dir': 'embeddings/refined',
    'tagger': 'tagger/model.fader',
    'tagger_no_refined': 'tagger/model-no-refined.fader',
    'tagger_baseline': 'tagger/model-baseline.fader',
    'detections': 'tagger/detections.jsonl',
    'conll_report': 'evaluation/conll_report.json',
    'immediacy_report': 'evaluation/immediacy_report.json',
    'detection_events': 'evaluation/detection_events.jsonl',
    'world': 'world',
    'manifests': 'manifests',
}

# Which stage produces each artifact (used in missing-artifact errors)
ARTIFACT_STAGES = {
    'index_posts': 'ingest',
    'index_report': 'ingest',
    'entities': 'entities',
    'supervision': 'supervise',
    'baseline': 'supervise-baseline',
    'train': 'supervise',
    'dev': 'supervise',
    'test': 'supervise',
    'base_vectors': 'train-embeddings',
    'refined_dir': 'refine-embeddings',
    'tagger': 'train-tagger',
    'tagger_no_refined': 'train-tagger --no-refined',
    'tagger_baseline': 'train-tagger --data baseline',
    'detections': 'tag',
}

# Logging configuration
LOGGING_CONFIG = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'standard': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'standard',
            'level': LOG_LEVEL,
            'stream': 'ext://sys.stderr'
        },
    },
    'loggers': {
        name: {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False
        }
        for name in (
            'det_corpus',
            'det_kb',
            'det_supervision',
            'det_embeddings',
            'det_tagger',
            'det_evaluation',
            'det_synth',
            'det_cli',
        )
    }
}

# Error messages
ERROR_MESSAGES = {
    'unreadable_source': "Cannot read {what} from {path}: {error}",
    'empty_phrase': "Phrase must contain at least one token",
    'bad_k': "k must be >= 1 (got {k})",
    'missing_artifact': "Missing artifact {path}; run the '{stage}' stage first",
    'missing_input': "Input path for '{key}' does not exist: {path}",
    'config_invalid': "Invalid configuration: {error}",
    'conll_format': "{path}:{line}: {problem}",
    'illegal_tags': "Illegal BILOU sequence at position {position}: {prev} -> {tag}",
    'length_mismatch': "Sentence {index}: {left} tokens vs {right} tags",
    'empty_vocab': "Empty vocabulary after min_count={min_count} filtering",
    'diverged': "Non-finite loss at epoch {epoch}, batch {batch} (parameter norm {norm:.4g})",
    'entity_mismatch': "Entity ids differ from the generated world: {names}",
    'world_invalid': "Invalid world spec: {violations}",
    'rating_rows': "Row {row} sums to {total}, expected {n} raters",
    'no_training_data': "Training and development sets must both be non-empty",
    'refined_tag': "refine_for_day expects a BASE model, got {tag}",
}
