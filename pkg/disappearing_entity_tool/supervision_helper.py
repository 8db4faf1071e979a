#!/usr/bin/env python
"""
Time-sensitive distant supervision: collect disappearing contexts on the peak
day of an entity's disappearance year, collect earlier posts as negatives, and
read/write the resulting labeled sentences as CoNLL.
"""

import logging
import re
from collections import defaultdict
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from pydantic import BaseModel, ValidationError

from .bilou import END, START, OUTSIDE, extract_spans, is_legal_transition, split_tag, spans_to_tags
from .corpus_helper import (
    CorpusIndex,
    DailySeries,
    contains_phrase,
    daily_counts,
    derive_seed,
    peak_day,
    phrase_of,
    seeded_sample,
)
from .errors import IllegalTagSequenceError, InputFormatError
from .models import CoarseType, Dataset, EntityRecord, LabeledSentence, Polarity, Post, SupervisionConfig

# Configure logging
logger = logging.getLogger('det_supervision')

BASELINE_MIN_DAILY = 10
BASELINE_K = 100
BASELINE_GAP_DAYS = 365

HEADER_PATTERN = re.compile(
    r"^# id=(?P<id>\S*) date=(?P<date>\d{4}-\d{2}-\d{2}) entity=(?P<entity>.*?) "
    r"polarity=(?P<polarity>POS|NEG)(?: category=(?P<category>.*))?$"
)


# -------------------------------------------------------------------------
# Labeling
# -------------------------------------------------------------------------

def label_mentions(
    tokens: Sequence[str],
    aliases: Sequence[str],
    coarse_type: str,
    fold_case: bool = True,
    first_only: bool = False,
) -> List[str]:
    """Tag alias mentions with BILOU; greedy longest match, left to right."""
    kind = getattr(coarse_type, "value", coarse_type)

    def fold(seq: Sequence[str]) -> Tuple[str, ...]:
        return tuple(t.casefold() for t in seq) if fold_case else tuple(seq)

    phrases = sorted({fold(phrase_of(a)) for a in aliases if phrase_of(a)}, key=len, reverse=True)
    keyed = fold(tokens)
    spans = []
    i = 0
    while i < len(keyed):
        match = next((p for p in phrases if keyed[i:i + len(p)] == p), None)
        if match is None:
            i += 1
            continue
        spans.append((i, i + len(match), kind))
        if first_only:
            break
        i += len(match)
    return spans_to_tags(len(tokens), spans)


def _sentence(post: Post, entity: EntityRecord, polarity: Polarity, tags: Sequence[str]) -> LabeledSentence:
    return LabeledSentence(
        tokens=post.tokens,
        tags=tuple(tags),
        date=post.day,
        entity_id=entity.canonical_name,
        polarity=polarity,
        post_id=post.id,
        category=entity.categories[0] if entity.categories else None,
    )


def _positive(post: Post, entity: EntityRecord, fold_case: bool, first_only: bool = False) -> Optional[LabeledSentence]:
    tags = label_mentions(post.tokens, entity.aliases, entity.coarse_type, fold_case, first_only)
    if all(t == OUTSIDE for t in tags):
        return None
    return _sentence(post, entity, Polarity.POSITIVE, tags)


def _negative(post: Post, entity: EntityRecord) -> LabeledSentence:
    return _sentence(post, entity, Polarity.NEGATIVE, [OUTSIDE] * len(post.tokens))


# -------------------------------------------------------------------------
# Entity-level statistics
# -------------------------------------------------------------------------

def entity_series(index: CorpusIndex, entity: EntityRecord) -> DailySeries:
    """Per-day count of posts mentioning any alias of ``entity``."""
    phrases = [phrase_of(a) for a in entity.aliases if phrase_of(a)]
    if len(phrases) == 1:
        return daily_counts(index, phrases[0])
    keyed = [index.key(p) for p in phrases]
    counts: Dict[date, int] = {}
    for day in index.days():
        n = 0
        for post in index.posts_on_day(day):
            if post.is_retweet and index.options.exclude_rt:
                continue
            post_key = index.key(post.tokens)
            if any(contains_phrase(post_key, p) for p in keyed):
                n += 1
        if n:
            counts[day] = n
    return DailySeries(tuple(sorted(counts.items())))


def entity_posts(index: CorpusIndex, entity: EntityRecord, days: Iterable[date]) -> List[Post]:
    """Posts on ``days`` mentioning any alias, in canonical (day, time, id) order."""
    found: Dict[str, Post] = {}
    for alias in entity.aliases:
        phrase = phrase_of(alias)
        if phrase:
            for post in index.matching_posts(phrase, days):
                found[post.id] = post
    return sorted(found.values(), key=lambda p: (p.timestamp, p.id))


# -------------------------------------------------------------------------
# Time-sensitive distant supervision
# -------------------------------------------------------------------------

def collect_positive_contexts(
    entity: EntityRecord,
    index: CorpusIndex,
    cfg: SupervisionConfig,
) -> List[LabeledSentence]:
    """Sample up to k posts from the peak day of the disappearance year."""
    series = entity_series(index, entity)
    peak = peak_day(series, entity.disappearance_year)
    if peak is None:
        logger.info(f"Uncovered entity {entity.canonical_name}: no posts in {entity.disappearance_year}")
        return []
    posts = seeded_sample(
        entity_posts(index, entity, [peak]), cfg.k,
        derive_seed(cfg.seed, "positive", entity.canonical_name),
    )
    sentences = [
        _positive(post, entity, index.options.fold_case, not cfg.label_all_mentions)
        for post in posts
    ]
    return [s for s in sentences if s is not None]


def collect_negative_contexts(
    entity: EntityRecord,
    index: CorpusIndex,
    cfg: SupervisionConfig,
    n_positives: Optional[int] = None,
) -> List[LabeledSentence]:
    """Sample posts from before the disappearance year, balanced to the positives."""
    if n_positives is None:
        n_positives = len(collect_positive_contexts(entity, index, cfg))
    limit = min(cfg.k, n_positives)
    if limit < 1:
        return []
    cutoff = date(entity.disappearance_year, 1, 1)
    days = [day for day, _ in entity_series(index, entity) if day < cutoff]
    posts = seeded_sample(
        entity_posts(index, entity, days), limit,
        derive_seed(cfg.seed, "negative", entity.canonical_name),
    )
    return [_negative(post, entity) for post in posts]


def collect_entity_contexts(
    entity: EntityRecord,
    index: CorpusIndex,
    cfg: SupervisionConfig,
) -> List[LabeledSentence]:
    positives = collect_positive_contexts(entity, index, cfg)
    negatives = collect_negative_contexts(entity, index, cfg, len(positives))
    return positives + negatives


def _untyped(entity: EntityRecord) -> bool:
    if entity.coarse_type is CoarseType.UNMAPPED:
        logger.info(f"Skipping {entity.canonical_name}: no coarse type to label it with")
        return True
    return False


def collect_dataset(
    entities: Sequence[EntityRecord],
    index: CorpusIndex,
    cfg: SupervisionConfig,
) -> List[LabeledSentence]:
    """Run TDS over every typed entity; output in canonical (entity, date, post id) order.

    UNMAPPED entities have no tag to train on and are skipped here; they stay
    relative-recall targets.
    """
    sentences: List[LabeledSentence] = []
    for entity in entities:
        if _untyped(entity):
            continue
        sentences.extend(collect_entity_contexts(entity, index, cfg))
    return sorted(sentences, key=lambda s: s.sort_key)


def collect_baseline_contexts(
    entity: EntityRecord,
    index: CorpusIndex,
    cutoff: int,
    seed: int = 0,
) -> Tuple[List[LabeledSentence], List[LabeledSentence]]:
    """Last-burst variant: positives from the latest day (through ``cutoff``)
    with more than ten mentions, retweets first; negatives from over a year earlier.
    """
    if _untyped(entity):
        return [], []
    series = entity_series(index, entity)
    qualifying = [day for day, count in series if count > BASELINE_MIN_DAILY and day.year <= cutoff]
    if not qualifying:
        return [], []
    positive_day = qualifying[-1]
    candidates = entity_posts(index, entity, [positive_day])
    retweets = [p for p in candidates if p.is_retweet]
    chosen = seeded_sample(retweets, BASELINE_K, derive_seed(seed, "baseline-rt", entity.canonical_name))
    if len(chosen) < BASELINE_K:
        others = [p for p in candidates if not p.is_retweet]
        chosen += seeded_sample(
            others, BASELINE_K - len(chosen),
            derive_seed(seed, "baseline-fill", entity.canonical_name),
        ) if others else []
    positives = [s for s in (_positive(p, entity, index.options.fold_case) for p in chosen) if s is not None]

    latest_negative_day = positive_day - timedelta(days=BASELINE_GAP_DAYS + 1)
    negative_days = [day for day, _ in series if day <= latest_negative_day]
    negatives: List[LabeledSentence] = []
    if positives and negative_days:
        pool = entity_posts(index, entity, negative_days)
        negatives = [
            _negative(p, entity) for p in seeded_sample(
                pool, len(positives), derive_seed(seed, "baseline-neg", entity.canonical_name),
            )
        ]
    return positives, negatives


# -------------------------------------------------------------------------
# Splitting
# -------------------------------------------------------------------------

def _allocate(sizes: Dict[str, int], total: int) -> Dict[str, int]:
    """Largest-remainder allocation of ``total`` picks across entities."""
    grand = sum(sizes.values())
    if grand == 0:
        return {name: 0 for name in sizes}
    exact = {name: total * n / grand for name, n in sizes.items()}
    counts = {name: int(v) for name, v in exact.items()}
    leftover = total - sum(counts.values())
    order = sorted(sizes, key=lambda name: (-(exact[name] - counts[name]), name))
    for name in order[:leftover]:
        counts[name] += 1
    return counts


def split_dataset(sentences: Sequence[LabeledSentence], cfg: SupervisionConfig) -> Dataset:
    """Split by date into train/test, then hold out a seeded dev fraction per entity."""
    first, last = cfg.train_years
    train_pool = [s for s in sentences if first <= s.date.year <= last]
    test = [s for s in sentences if s.date.year == cfg.test_year]
    dropped = len(sentences) - len(train_pool) - len(test)
    if dropped:
        logger.info(f"{dropped} sentences fall outside the train and test years")

    train_pool = sorted(train_pool, key=lambda s: s.sort_key)
    by_entity: Dict[str, List[LabeledSentence]] = defaultdict(list)
    for sentence in train_pool:
        by_entity[sentence.entity_id].append(sentence)
    quota = _allocate({e: len(v) for e, v in by_entity.items()}, round(cfg.dev_fraction * len(train_pool)))

    dev_keys: Set[Tuple[str, date, str]] = set()
    for entity_id in sorted(by_entity):
        if quota[entity_id]:
            picked = seeded_sample(by_entity[entity_id], quota[entity_id], derive_seed(cfg.seed, "dev", entity_id))
            dev_keys.update(s.sort_key for s in picked)
    dev_posts = {key[2] for key in dev_keys}
    # A post labeled for two entities must not straddle train and dev.
    dev = [s for s in train_pool if s.sort_key in dev_keys or s.post_id in dev_posts]
    train = [s for s in train_pool if not (s.sort_key in dev_keys or s.post_id in dev_posts)]
    return Dataset(train=train, dev=dev, test=sorted(test, key=lambda s: s.sort_key))


# -------------------------------------------------------------------------
# CoNLL I/O
# -------------------------------------------------------------------------

def format_header(sentence: LabeledSentence) -> str:
    header = (
        f"# id={sentence.post_id} date={sentence.date.isoformat()} "
        f"entity={sentence.entity_id} polarity={sentence.polarity.value}"
    )
    if sentence.category:
        header += f" category={sentence.category}"
    return header


def write_conll(sentences: Iterable[LabeledSentence], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sentence in sentences:
            f.write(format_header(sentence) + "\n")
            for token, tag in zip(sentence.tokens, sentence.tags):
                f.write(f"{token}\t{tag}\n")
            f.write("\n")


def read_conll(path: Path) -> List[LabeledSentence]:
    """Read a CoNLL file written by write_conll, validating BILOU on the way."""
    sentences: List[LabeledSentence] = []
    header: Optional[re.Match] = None
    header_line = 0
    tokens: List[str] = []
    tags: List[str] = []
    prev = START

    def flush(line_no: int) -> None:
        nonlocal header, tokens, tags, prev
        if header is None:
            return
        if tags and not is_legal_transition(prev, END):
            raise InputFormatError(path=path, line=line_no - 1, problem=f"span opened by {prev} is never closed")
        try:
            sentences.append(LabeledSentence(
                tokens=tuple(tokens), tags=tuple(tags),
                date=date.fromisoformat(header["date"]),
                entity_id=header["entity"],
                polarity=Polarity(header["polarity"]),
                post_id=header["id"],
                category=header["category"],
            ))
        except (ValidationError, ValueError) as e:
            raise InputFormatError(path=path, line=header_line, problem=str(e).splitlines()[0])
        header, tokens, tags, prev = None, [], [], START

    with open(path, "r", encoding="utf-8") as f:
        line_no = 0
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                flush(line_no)
                continue
            if line.startswith("# "):
                flush(line_no)
                header = HEADER_PATTERN.match(line)
                header_line = line_no
                if header is None:
                    raise InputFormatError(path=path, line=line_no, problem=f"malformed header {line!r}")
                continue
            if header is None:
                raise InputFormatError(path=path, line=line_no, problem="token line before a sentence header")
            parts = line.split("\t")
            if len(parts) != 2:
                raise InputFormatError(path=path, line=line_no, problem=f"expected TOKEN<TAB>TAG: {line!r}")
            token, tag = parts
            try:
                split_tag(tag)
            except IllegalTagSequenceError:
                raise InputFormatError(path=path, line=line_no, problem=f"malformed tag {tag!r}")
            if not is_legal_transition(prev, tag):
                raise InputFormatError(path=path, line=line_no, problem=f"illegal transition {prev} -> {tag}")
            tokens.append(token)
            tags.append(tag)
            prev = tag
        flush(line_no + 1)
    return sentences


# -------------------------------------------------------------------------
# Statistics
# -------------------------------------------------------------------------

class CategoryStatistics(BaseModel):
    entities: int = 0
    posts: int = 0


class TypeStatistics(BaseModel):
    entities: int = 0
    posts: int = 0
    positives: int = 0
    negatives: int = 0
    categories: Dict[str, CategoryStatistics] = {}


def sentence_type(sentence: LabeledSentence) -> Optional[str]:
    spans = extract_spans(sentence.tags)
    return spans[0][2] if spans else None


def dataset_statistics(sentences: Sequence[LabeledSentence]) -> Dict[str, TypeStatistics]:
    """Per-type entity and post counts with a per-category breakdown."""
    entity_type: Dict[str, str] = {}
    for sentence in sentences:
        kind = sentence_type(sentence)
        if kind and sentence.entity_id not in entity_type:
            entity_type[sentence.entity_id] = kind

    table: Dict[str, TypeStatistics] = {}
    seen: Dict[str, Set[str]] = defaultdict(set)
    seen_cat: Dict[Tuple[str, str], Set[str]] = defaultdict(set)
    for sentence in sentences:
        kind = entity_type.get(sentence.entity_id, "UNMAPPED")
        row = table.setdefault(kind, TypeStatistics())
        row.posts += 1
        if sentence.polarity is Polarity.POSITIVE:
            row.positives += 1
        else:
            row.negatives += 1
        seen[kind].add(sentence.entity_id)
        category = sentence.category or "Others"
        cat_row = row.categories.setdefault(category, CategoryStatistics())
        cat_row.posts += 1
        seen_cat[(kind, category)].add(sentence.entity_id)
    for kind, row in table.items():
        row.entities = len(seen[kind])
        for category, cat_row in row.categories.items():
            cat_row.entities = len(seen_cat[(kind, category)])
    total = TypeStatistics(
        entities=sum(r.entities for r in table.values()),
        posts=sum(r.posts for r in table.values()),
        positives=sum(r.positives for r in table.values()),
        negatives=sum(r.negatives for r in table.values()),
    )
    table = dict(sorted(table.items()))
    table["TOTAL"] = total
    return table
