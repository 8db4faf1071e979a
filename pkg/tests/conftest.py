import json
from datetime import date, datetime, time, timezone
from pathlib import Path

import numpy as np
import pytest

from disappearing_entity_tool.corpus_helper import tokenize
from disappearing_entity_tool.embedding_helper import EmbeddingModel
from disappearing_entity_tool.models import EmbeddingConfig, Post, TaggerConfig


def _make_post(post_id, day, text, minute=0, rt=False):
    stamp = datetime.combine(day, time(minute // 60, minute % 60), tzinfo=timezone.utc)
    return Post(id=post_id, timestamp=stamp, text=text, tokens=tuple(tokenize(text)), is_retweet=rt)


def _record(post_id, ts, text, rt=False):
    return json.dumps({"id": post_id, "ts": ts, "text": text, "rt": rt})


@pytest.fixture
def make_post():
    return _make_post


@pytest.fixture
def record():
    return _record


@pytest.fixture
def tiny_embedding_config():
    return EmbeddingConfig(
        dim=8, window=2, negatives=2, min_count=1, ngram_min=3, ngram_max=4,
        buckets=64, epochs_base=1, epochs_refine=1, seed=5,
    )


def _random_embedding(words, cfg, seed=0, tag="BASE"):
    rng = np.random.default_rng(seed)
    input_vectors = rng.normal(0.0, 1.0, (len(words) + cfg.buckets, cfg.dim)).astype(np.float32)
    output_vectors = rng.normal(0.0, 0.1, (len(words), cfg.dim)).astype(np.float32)
    return EmbeddingModel(words, np.ones(len(words), dtype=np.int64), input_vectors, output_vectors, cfg, tag)


@pytest.fixture
def random_embedding():
    return _random_embedding


@pytest.fixture
def tiny_tagger_config():
    return TaggerConfig(
        word_hidden=6, char_emb=4, char_hidden=3, dropout=0.0, lr=0.1,
        batch=4, max_epochs=2, seed=7,
    )


@pytest.fixture
def day():
    return date(2019, 3, 1)


@pytest.fixture
def write_lines(tmp_path):
    def _write(name, lines):
        path = Path(tmp_path) / name
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path
    return _write
