#!/usr/bin/env python
"""
Subword skip-gram embeddings with negative sampling: base training on a
pre-period corpus and per-day refinement of a copy on one day's posts.
"""

import logging
import re
from collections import Counter, OrderedDict
from datetime import date
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from .binary_io import decode_array, decode_json, encode_array, encode_json, read_sections, write_sections
from .config import ERROR_MESSAGES
from .corpus_helper import derive_seed, make_rng
from .errors import ArgumentError, EmptyVocabularyError, InputFormatError
from .models import EmbeddingConfig, Post

# Configure logging
logger = logging.getLogger('det_embeddings')

MAGIC = b"FADEV01"
BASE_TAG = "BASE"
REFINED_PREFIX = "REFINED:"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF

Sentence = Sequence[str]


# -------------------------------------------------------------------------
# Subwords
# -------------------------------------------------------------------------

def fnv1a_64(data: bytes) -> int:
    value = FNV_OFFSET
    for byte in data:
        value ^= byte
        value = (value * FNV_PRIME) & MASK64
    return value


def char_ngrams(word: str, ngram_min: int, ngram_max: int) -> List[str]:
    """Character n-grams of ``<word>``, shortest first, repeats kept."""
    marked = f"<{word}>"
    grams = []
    for n in range(ngram_min, ngram_max + 1):
        for i in range(len(marked) - n + 1):
            grams.append(marked[i:i + n])
    return grams


def ngram_bucket(ngram: str, buckets: int) -> int:
    return fnv1a_64(ngram.encode("utf-8")) % buckets


# -------------------------------------------------------------------------
# Model
# -------------------------------------------------------------------------

class EmbeddingModel:
    """Vocabulary, input matrix (word rows then bucket rows) and output matrix."""

    def __init__(
        self,
        words: Sequence[str],
        counts: np.ndarray,
        input_vectors: np.ndarray,
        output_vectors: np.ndarray,
        config: EmbeddingConfig,
        tag: str = BASE_TAG,
    ):
        self.words: List[str] = list(words)
        self.vocab: Dict[str, int] = {w: i for i, w in enumerate(self.words)}
        self.counts = np.asarray(counts, dtype=np.int64)
        self.input_vectors = input_vectors
        self.output_vectors = output_vectors
        self.config = config
        self.tag = tag
        self._rows: Dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def is_base(self) -> bool:
        return self.tag == BASE_TAG

    @property
    def day(self) -> Optional[date]:
        if self.tag.startswith(REFINED_PREFIX):
            return date.fromisoformat(self.tag[len(REFINED_PREFIX):])
        return None

    def input_rows(self, word: str) -> np.ndarray:
        """Rows of ``input_vectors`` averaged into ``word``'s representation."""
        rows = self._rows.get(word)
        if rows is None:
            offset = len(self.words)
            buckets = [
                offset + ngram_bucket(g, self.config.buckets)
                for g in char_ngrams(word, self.config.ngram_min, self.config.ngram_max)
            ]
            if word in self.vocab:
                buckets.insert(0, self.vocab[word])
            rows = np.asarray(buckets, dtype=np.int64)
            self._rows[word] = rows
        return rows

    def copy(self, tag: str) -> "EmbeddingModel":
        clone = EmbeddingModel(
            self.words, self.counts.copy(), self.input_vectors.copy(),
            self.output_vectors.copy(), self.config, tag,
        )
        clone._rows = dict(self._rows)
        return clone


def lookup(
    model: EmbeddingModel,
    word: str,
    with_info: bool = False,
) -> Union[np.ndarray, Tuple[np.ndarray, Dict[str, bool]]]:
    """Average of the word row (if in vocabulary) and its n-gram bucket rows.

    A word with no n-grams and no vocabulary row gets the zero vector; pass
    ``with_info=True`` to also receive ``{"in_vocab", "empty"}`` flags.
    """
    rows = model.input_rows(word)
    if len(rows) == 0:
        vector = np.zeros(model.dim, dtype=np.float32)
    else:
        vector = model.input_vectors[rows].mean(axis=0)
    if with_info:
        return vector, {"in_vocab": word in model.vocab, "empty": len(rows) == 0}
    return vector


def similarity(model: EmbeddingModel, w1: str, w2: str) -> float:
    a = lookup(model, w1).astype(np.float64)
    b = lookup(model, w2).astype(np.float64)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        return 0.0
    return float(np.clip(a @ b / norm, -1.0, 1.0))


# -------------------------------------------------------------------------
# Skip-gram with negative sampling
# -------------------------------------------------------------------------

def pair_loss_and_grad(
    input_rows: np.ndarray,
    context_vector: np.ndarray,
    negative_vectors: np.ndarray,
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss of one (target, context) pair and its gradients, in float64.

    ``h`` is the mean of ``input_rows``; the loss is
    ``-log s(u_c . h) - sum_n log s(-u_n . h)``.
    Returns ``(loss, d_input_rows, d_context, d_negatives)``.
    """
    rows = np.asarray(input_rows, dtype=np.float64)
    u_c = np.asarray(context_vector, dtype=np.float64)
    u_n = np.asarray(negative_vectors, dtype=np.float64).reshape(-1, rows.shape[1])
    h = rows.mean(axis=0)
    s_c = u_c @ h
    s_n = u_n @ h
    loss = float(np.logaddexp(0.0, -s_c) + np.logaddexp(0.0, s_n).sum())
    g_c = expit(s_c) - 1.0
    g_n = expit(s_n)
    d_h = g_c * u_c + g_n @ u_n
    d_rows = np.broadcast_to(d_h / rows.shape[0], rows.shape).copy()
    return loss, d_rows, g_c * h, np.outer(g_n, h)


def _unigram_table(counts: np.ndarray, power: float = 0.75) -> np.ndarray:
    weights = counts.astype(np.float64) ** power
    return np.cumsum(weights) / weights.sum()


def _sgns_update(
    model: EmbeddingModel,
    rows: np.ndarray,
    contexts: np.ndarray,
    negatives: np.ndarray,
    lr: float,
) -> None:
    # Every context of one target is scored against the same hidden vector.
    h = model.input_vectors[rows].mean(axis=0)
    targets = np.concatenate([contexts[:, None], negatives], axis=1)
    out = model.output_vectors[targets]
    labels = np.zeros(targets.shape, dtype=np.float32)
    labels[:, 0] = 1.0
    g = ((labels - expit(out @ h)) * lr).astype(np.float32)
    grad_h = np.einsum("ck,ckd->d", g, out)
    np.add.at(model.output_vectors, targets.ravel(), g.reshape(-1, 1) * h[None, :])
    np.add.at(model.input_vectors, rows, np.broadcast_to(grad_h / len(rows), (len(rows), model.dim)))


def _train_epoch(
    model: EmbeddingModel,
    sentences: Sequence[Sentence],
    table: np.ndarray,
    rng: np.random.Generator,
    lr_at,
    progress: List[int],
    total: int,
) -> None:
    cfg = model.config
    for tokens in sentences:
        ids = [model.vocab.get(t, -1) for t in tokens]
        lr = lr_at(progress[0] / max(total, 1))
        for i, word in enumerate(tokens):
            b = int(rng.integers(1, cfg.window + 1))
            contexts = [
                ids[j] for j in range(max(0, i - b), min(len(tokens), i + b + 1))
                if j != i and ids[j] >= 0
            ]
            if not contexts:
                continue
            rows = model.input_rows(word)
            if len(rows) == 0:
                continue
            draws = rng.random((len(contexts), cfg.negatives))
            negatives = np.minimum(np.searchsorted(table, draws), len(table) - 1)
            _sgns_update(model, rows, np.asarray(contexts, dtype=np.int64), negatives, lr)
        progress[0] += len(tokens)


def _sentences(corpus: Iterable[Union[Post, Sentence]]) -> List[List[str]]:
    return [list(item.tokens) if isinstance(item, Post) else list(item) for item in corpus]


def train_base(corpus: Iterable[Union[Post, Sentence]], cfg: EmbeddingConfig, show_progress: bool = False) -> EmbeddingModel:
    """Train base vectors on a pre-period corpus (single-threaded, seeded)."""
    sentences = _sentences(corpus)
    counter = Counter(t for tokens in sentences for t in tokens)
    words = sorted((w for w, c in counter.items() if c >= cfg.min_count), key=lambda w: (-counter[w], w))
    if not words:
        raise EmptyVocabularyError(min_count=cfg.min_count)
    vocab = set(words)
    sentences = [[t for t in tokens if t in vocab] for tokens in sentences]
    sentences = [tokens for tokens in sentences if len(tokens) > 1]

    rng = make_rng(cfg.seed)
    input_vectors = np.zeros((len(words) + cfg.buckets, cfg.dim), dtype=np.float32)
    input_vectors[:len(words)] = rng.uniform(-1.0 / cfg.dim, 1.0 / cfg.dim, (len(words), cfg.dim))
    output_vectors = np.zeros((len(words), cfg.dim), dtype=np.float32)
    counts = np.asarray([counter[w] for w in words], dtype=np.int64)
    model = EmbeddingModel(words, counts, input_vectors, output_vectors, cfg, BASE_TAG)

    table = _unigram_table(counts)
    total = cfg.epochs_base * sum(len(s) for s in sentences)
    progress = [0]

    def lr_at(fraction: float) -> float:
        return max(cfg.lr_min, cfg.lr_base - (cfg.lr_base - cfg.lr_min) * fraction)

    for epoch in tqdm(range(cfg.epochs_base), desc="base embeddings", disable=not show_progress):
        _train_epoch(model, sentences, table, rng, lr_at, progress, total)
        logger.debug(f"Finished base epoch {epoch + 1}/{cfg.epochs_base}")
    logger.info(f"Trained base embeddings: {len(words)} words, dim {cfg.dim}")
    return model


def refine_for_day(
    base: EmbeddingModel,
    day_posts: Iterable[Union[Post, Sentence]],
    cfg: Optional[EmbeddingConfig] = None,
    day: Optional[date] = None,
) -> EmbeddingModel:
    """Copy ``base`` and continue skip-gram updates on one day's posts.

    The vocabulary stays frozen; out-of-vocabulary day words act as targets
    through their subword buckets only.
    """
    if not base.is_base:
        raise ArgumentError(ERROR_MESSAGES['refined_tag'].format(tag=base.tag))
    cfg = cfg or base.config
    items = list(day_posts)
    if day is None and items and isinstance(items[0], Post):
        day = items[0].day
    tag = f"{REFINED_PREFIX}{day.isoformat()}" if day else f"{REFINED_PREFIX}unknown"
    refined = base.copy(tag)
    sentences = [s for s in _sentences(items) if len(s) > 1]
    if not sentences or cfg.epochs_refine == 0:
        return refined
    rng = make_rng(derive_seed(cfg.seed, "refine", day.isoformat() if day else ""))
    table = _unigram_table(base.counts)
    progress = [0]
    for _ in range(cfg.epochs_refine):
        _train_epoch(refined, sentences, table, rng, lambda _: cfg.lr_refine, progress, 1)
    return refined


# -------------------------------------------------------------------------
# Persistence
# -------------------------------------------------------------------------

def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(v), ".6g") for v in values)


def save_vectors(model: EmbeddingModel, path: Path) -> None:
    """Write the text interchange format (6 significant digits)."""
    cfg = model.config
    path.parent.mkdir(parents=True, exist_ok=True)
    offset = len(model.words)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{len(model.words)} {cfg.dim} {cfg.buckets} {cfg.ngram_min} {cfg.ngram_max}\n")
        for i, word in enumerate(model.words):
            f.write(f"{word} {_fmt(model.input_vectors[i])}\n")
        bucket_rows = model.input_vectors[offset:]
        for bucket in np.flatnonzero(np.any(bucket_rows != 0, axis=1)):
            f.write(f"#{bucket} {_fmt(bucket_rows[bucket])}\n")


def load_vectors(path: Path, config: Optional[EmbeddingConfig] = None) -> EmbeddingModel:
    """Read the text format; output vectors are not part of it and come back zero."""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    try:
        size, dim, buckets, ngram_min, ngram_max = (int(x) for x in lines[0].split())
    except ValueError:
        raise InputFormatError(path=path, line=1, problem="bad vector header")
    cfg = (config or EmbeddingConfig()).model_copy(update=dict(
        dim=dim, buckets=buckets, ngram_min=ngram_min, ngram_max=ngram_max,
    ))
    words: List[str] = []
    input_vectors = np.zeros((size + buckets, dim), dtype=np.float32)
    for line_no, line in enumerate(lines[1:], 2):
        if not line:
            continue
        head, _, rest = line.partition(" ")
        values = np.asarray(rest.split(" "), dtype=np.float32)
        if values.shape != (dim,):
            raise InputFormatError(path=path, line=line_no, problem=f"expected {dim} values")
        if len(words) < size:
            input_vectors[len(words)] = values
            words.append(head)
        elif re.fullmatch(r"#\d+", head) and int(head[1:]) < buckets:
            input_vectors[size + int(head[1:])] = values
        else:
            raise InputFormatError(path=path, line=line_no, problem=f"unexpected row {head!r}")
    return EmbeddingModel(
        words, np.ones(size, dtype=np.int64), input_vectors,
        np.zeros((size, dim), dtype=np.float32), cfg, BASE_TAG,
    )


def save_model(model: EmbeddingModel, path: Path, with_output: bool = True) -> None:
    """Lossless binary companion: vocabulary, counts, matrices, config and tag.

    Refined models are never trained further, so their files may leave the
    output matrix out.
    """
    sections = [
        ("meta", encode_json({"tag": model.tag, "config": model.config.model_dump()})),
        ("words", encode_json(model.words)),
        ("counts", encode_array(model.counts)),
        ("input", encode_array(model.input_vectors)),
    ]
    if with_output:
        sections.append(("output", encode_array(model.output_vectors)))
    write_sections(path, MAGIC, sections)


def load_model(path: Path) -> EmbeddingModel:
    sections = read_sections(path, MAGIC)
    meta = decode_json(sections["meta"])
    words = decode_json(sections["words"])
    config = EmbeddingConfig(**meta["config"])
    if "output" in sections:
        output_vectors = decode_array(sections["output"])
    else:
        output_vectors = np.zeros((len(words), config.dim), dtype=np.float32)
    return EmbeddingModel(
        words,
        decode_array(sections["counts"]),
        decode_array(sections["input"]),
        output_vectors,
        config,
        meta["tag"],
    )


def refined_path(directory: Path, day: date) -> Path:
    return Path(directory) / f"refined-{day.isoformat()}.bin"


class RefinedProvider:
    """Day -> refined model.

    Looks in memory, then in ``directory`` for ``refined-YYYY-MM-DD.bin``,
    then refines ``base`` on the day's posts from ``index`` when both are
    given. Returns None otherwise, and callers fall back to base vectors.
    Only the ``max_cached`` most recently used days stay in memory.
    """

    def __init__(
        self,
        models: Optional[Dict[date, EmbeddingModel]] = None,
        directory: Optional[Path] = None,
        base: Optional[EmbeddingModel] = None,
        index=None,
        max_cached: int = 16,
    ):
        self._pinned: Dict[date, EmbeddingModel] = dict(models or {})
        self._cache: "OrderedDict[date, EmbeddingModel]" = OrderedDict()
        self.directory = Path(directory) if directory else None
        self.base = base
        self.index = index
        self.max_cached = max_cached
        self.missing: Set[date] = set()

    def get(self, day: date) -> Optional[EmbeddingModel]:
        if day in self._pinned:
            return self._pinned[day]
        if day in self._cache:
            self._cache.move_to_end(day)
            return self._cache[day]
        model = None
        if self.directory is not None and refined_path(self.directory, day).exists():
            model = load_model(refined_path(self.directory, day))
        elif self.base is not None and self.index is not None:
            model = refine_for_day(self.base, self.index.posts_on_day(day), day=day)
        if model is None:
            if day not in self.missing:
                logger.debug(f"No refined model for {day}")
            self.missing.add(day)
            return None
        self._cache[day] = model
        while len(self._cache) > self.max_cached:
            self._cache.popitem(last=False)
        return model

    def __call__(self, day: date) -> Optional[EmbeddingModel]:
        return self.get(day)
