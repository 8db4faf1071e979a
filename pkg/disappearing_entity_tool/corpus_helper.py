#!/usr/bin/env python
"""
Helper functions for ingesting timestamped posts and querying them by day
"""

import hashlib
import io
import json
import logging
import re
import unicodedata
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from dateutil.parser import isoparse
from pydantic import BaseModel

from .config import ERROR_MESSAGES
from .errors import ArgumentError, InputFormatError
from .models import CorpusOptions, Post

# Configure logging
logger = logging.getLogger('det_corpus')

URL_PATTERN = re.compile(r"https?://\S+|t\.co/\S+")
KEEP_WHEN_ADJACENT = frozenset("+&'.")

Phrase = Tuple[str, ...]
DayRange = Tuple[Optional[date], Optional[date]]


# -------------------------------------------------------------------------
# Tokenization
# -------------------------------------------------------------------------

def _is_punct(char: str) -> bool:
    return unicodedata.category(char)[0] in ("P", "S")


def _strip_token(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        if token[start] in KEEP_WHEN_ADJACENT and start + 1 < end and token[start + 1].isalnum():
            break
        start += 1
    while end > start and _is_punct(token[end - 1]):
        if token[end - 1] in KEEP_WHEN_ADJACENT and end - 2 >= start and token[end - 2].isalnum():
            # A final period only survives in abbreviations such as "U.S.".
            if token[end - 1] != "." or "." in token[start:end - 1]:
                break
        end -= 1
    return token[start:end]


def tokenize(text: str) -> List[str]:
    """Split a raw post into tokens.

    URLs are deleted first, then @-mentions and #-hashtags, then each
    whitespace token loses its outer punctuation. ``+ & ' .`` survive when
    they touch an alphanumeric character on the token's inner side, so
    ``Google+`` stays intact; a final period is kept only when the token
    already contains one (``U.S.``), so ``Vine.`` becomes ``Vine``. Case is
    preserved.
    """
    text = URL_PATTERN.sub(" ", text)
    tokens = []
    for raw in text.split():
        if raw.startswith(("@", "#")):
            continue
        token = _strip_token(raw)
        if token:
            tokens.append(token)
    return tokens


def phrase_of(alias: Union[str, Sequence[str]]) -> Phrase:
    """Token tuple for an alias string (or an already tokenized phrase)."""
    if isinstance(alias, str):
        return tuple(tokenize(alias))
    return tuple(alias)


def contains_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    n = len(phrase)
    if n == 0 or n > len(tokens):
        return False
    first = phrase[0]
    for i in range(len(tokens) - n + 1):
        if tokens[i] == first and tuple(tokens[i:i + n]) == tuple(phrase):
            return True
    return False


# -------------------------------------------------------------------------
# Seeded randomness
# -------------------------------------------------------------------------

def derive_seed(seed: int, *keys: Any) -> int:
    """Stable 64-bit seed for a (seed, key...) combination."""
    material = json.dumps([seed, *[str(k) for k in keys]]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "little")


def make_rng(seed: int) -> np.random.Generator:
    """The toolkit's PRNG: numpy PCG64 seeded through SeedSequence."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def seeded_sample(items: Sequence[Any], k: int, seed: int) -> List[Any]:
    """Uniform sample without replacement; everything when ``len(items) <= k``."""
    if k < 1:
        raise ArgumentError(ERROR_MESSAGES['bad_k'].format(k=k))
    if len(items) <= k:
        return list(items)
    chosen = make_rng(seed).choice(len(items), size=k, replace=False)
    return [items[int(i)] for i in chosen]


# -------------------------------------------------------------------------
# Index
# -------------------------------------------------------------------------

@dataclass(frozen=True)
class DailySeries:
    entries: Tuple[Tuple[date, int], ...] = ()

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def as_dict(self) -> Dict[date, int]:
        return dict(self.entries)


class IngestReport(BaseModel):
    accepted: int = 0
    malformed: int = 0
    duplicates: int = 0


class CorpusIndex:
    """Posts grouped by UTC day plus per-day post counts for token n-grams.

    A post adds at most one to its day's count for any n-gram, however often
    the n-gram repeats inside it.
    """

    def __init__(self, options: Optional[CorpusOptions] = None):
        self.options = options or CorpusOptions()
        self.posts: Dict[str, Post] = {}
        self.posts_by_day: Dict[date, List[str]] = {}
        self.phrase_counts: Dict[Phrase, Dict[date, int]] = defaultdict(dict)
        self._frozen = False

    @property
    def total_posts(self) -> int:
        return len(self.posts)

    def key(self, tokens: Sequence[str]) -> Phrase:
        if self.options.fold_case:
            return tuple(t.casefold() for t in tokens)
        return tuple(tokens)

    def add(self, post: Post) -> None:
        if self._frozen:
            raise RuntimeError("CorpusIndex is immutable once built")
        self.posts[post.id] = post
        self.posts_by_day.setdefault(post.day, []).append(post.id)
        if post.is_retweet and self.options.exclude_rt:
            return
        keyed = self.key(post.tokens)
        grams: Set[Phrase] = set()
        for n in range(1, min(self.options.max_ngram, len(keyed)) + 1):
            for i in range(len(keyed) - n + 1):
                grams.add(keyed[i:i + n])
        day = post.day
        for gram in grams:
            per_day = self.phrase_counts[gram]
            per_day[day] = per_day.get(day, 0) + 1

    def freeze(self) -> "CorpusIndex":
        for day, ids in self.posts_by_day.items():
            ids.sort(key=lambda pid: (self.posts[pid].timestamp, pid))
        self.posts_by_day = dict(sorted(self.posts_by_day.items()))
        self.phrase_counts = defaultdict(dict, self.phrase_counts)
        self._frozen = True
        return self

    def merge(self, other: "CorpusIndex") -> "CorpusIndex":
        """Combine two shards built over disjoint days."""
        merged = CorpusIndex(self.options)
        for shard in (self, other):
            merged.posts.update(shard.posts)
            for day, ids in shard.posts_by_day.items():
                merged.posts_by_day.setdefault(day, []).extend(ids)
            for gram, per_day in shard.phrase_counts.items():
                target = merged.phrase_counts[gram]
                for day, count in per_day.items():
                    target[day] = target.get(day, 0) + count
        return merged.freeze()

    def days(self) -> List[date]:
        return list(self.posts_by_day)

    def posts_on_day(self, day: date) -> List[Post]:
        return [self.posts[pid] for pid in self.posts_by_day.get(day, ())]

    def iter_posts(self) -> Iterator[Post]:
        for day in self.posts_by_day:
            yield from self.posts_on_day(day)

    def matching_posts(self, phrase: Sequence[str], days: Iterable[date]) -> List[Post]:
        """Posts on the given days whose tokens contain ``phrase`` contiguously."""
        keyed = self.key(phrase)
        found = []
        for day in sorted(set(days)):
            for post in self.posts_on_day(day):
                if contains_phrase(self.key(post.tokens), keyed):
                    found.append(post)
        return found


# -------------------------------------------------------------------------
# Ingestion
# -------------------------------------------------------------------------

def _parse_record(line: str) -> Post:
    record = json.loads(line)
    if not isinstance(record, dict):
        raise ValueError("record is not an object")
    post_id, ts, text = record.get("id"), record.get("ts"), record.get("text")
    if not isinstance(post_id, str) or not post_id or not isinstance(ts, str) or not isinstance(text, str):
        raise ValueError("missing id, ts or text")
    timestamp = isoparse(ts)
    if timestamp.tzinfo is None:
        raise ValueError(f"timestamp without timezone: {ts}")
    timestamp = timestamp.astimezone(timezone.utc).replace(microsecond=0)
    is_retweet = record.get("rt", False)
    lang = record.get("lang", "en")
    if not isinstance(is_retweet, bool) or not isinstance(lang, str):
        raise ValueError("rt must be a boolean and lang a string")
    return Post(
        id=post_id, timestamp=timestamp, text=text, tokens=tuple(tokenize(text)),
        is_retweet=is_retweet, lang=lang,
    )


def _open_lines(source: Union[str, Path, Iterable[Union[str, bytes]]]) -> Iterator[Union[str, bytes]]:
    """Raw lines of ``source``; files are read as bytes and decoded per line."""
    if not isinstance(source, (str, Path)):
        yield from source
        return
    try:
        with io.open(source, "rb") as f:
            yield from f
    except OSError as e:
        raise InputFormatError(
            ERROR_MESSAGES['unreadable_source'].format(what="posts", path=source, error=e)
        )


def iter_posts(
    source: Union[str, Path, Iterable[Union[str, bytes]]],
    report: Optional[IngestReport] = None,
) -> Iterator[Post]:
    """Parse post JSONL, skipping (and counting) malformed and duplicate lines."""
    report = report if report is not None else IngestReport()
    seen: Set[str] = set()
    for line_no, line in enumerate(_open_lines(source), 1):
        try:
            if isinstance(line, bytes):
                line = line.decode("utf-8")
            if not line.strip():
                continue
            post = _parse_record(line)
        except (ValueError, TypeError, OverflowError) as e:
            report.malformed += 1
            logger.warning(f"Skipping malformed post on line {line_no}: {e}")
            continue
        if post.id in seen:
            report.duplicates += 1
            continue
        seen.add(post.id)
        report.accepted += 1
        yield post


def build_index(
    posts: Iterable[Post],
    options: Optional[CorpusOptions] = None,
    workers: int = 1,
) -> CorpusIndex:
    """Index posts, optionally in day-partitioned shards merged at the end."""
    options = options or CorpusOptions()
    posts = list(posts)
    if workers <= 1 or len(posts) < 2:
        index = CorpusIndex(options)
        for post in posts:
            index.add(post)
        return index.freeze()

    shards: List[List[Post]] = [[] for _ in range(workers)]
    for post in posts:
        shards[post.day.toordinal() % workers].append(post)

    def _build(shard: List[Post]) -> CorpusIndex:
        index = CorpusIndex(options)
        for post in shard:
            index.add(post)
        return index.freeze()

    with ThreadPoolExecutor(max_workers=workers) as pool:
        built = list(pool.map(_build, shards))
    merged = built[0]
    for shard_index in built[1:]:
        merged = merged.merge(shard_index)
    return merged


def ingest_posts(
    source: Union[str, Path, Iterable[str]],
    options: Optional[CorpusOptions] = None,
    workers: int = 1,
) -> Tuple[CorpusIndex, IngestReport]:
    """Tokenize and index every well-formed record of a post JSONL stream."""
    report = IngestReport()
    posts = list(iter_posts(source, report))
    index = build_index(posts, options, workers)
    logger.info(
        f"Ingested {report.accepted} posts ({report.malformed} malformed, "
        f"{report.duplicates} duplicates) over {len(index.posts_by_day)} days"
    )
    return index, report


def post_to_record(post: Post) -> Dict[str, Any]:
    return {
        "id": post.id,
        "ts": post.timestamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "text": post.text,
        "rt": post.is_retweet,
        "lang": post.lang,
    }


def save_index(index: CorpusIndex, report: IngestReport, posts_path: Path, report_path: Path) -> None:
    posts_path.parent.mkdir(parents=True, exist_ok=True)
    with open(posts_path, "w", encoding="utf-8", newline="\n") as f:
        for post in index.iter_posts():
            f.write(json.dumps(post_to_record(post), ensure_ascii=False, sort_keys=True) + "\n")
    report_path.write_text(json.dumps(report.model_dump(), indent=2, sort_keys=True) + "\n")


def load_index(posts_path: Path, options: Optional[CorpusOptions] = None, workers: int = 1) -> CorpusIndex:
    index, _ = ingest_posts(posts_path, options, workers)
    return index


# -------------------------------------------------------------------------
# Queries
# -------------------------------------------------------------------------

def _in_range(day: date, day_range: Optional[DayRange]) -> bool:
    if day_range is None:
        return True
    start, end = day_range
    return (start is None or day >= start) and (end is None or day <= end)


def daily_counts(
    index: CorpusIndex,
    phrase: Sequence[str],
    day_range: Optional[DayRange] = None,
) -> DailySeries:
    """Per-day number of posts containing ``phrase``; zero days omitted."""
    phrase = phrase_of(phrase)
    if not phrase:
        raise ArgumentError(ERROR_MESSAGES['empty_phrase'])
    keyed = index.key(phrase)
    if len(keyed) <= index.options.max_ngram:
        per_day = index.phrase_counts.get(keyed, {})
    else:
        # Longer than the indexed n-grams: scan.
        per_day = {}
        for post in index.iter_posts():
            if post.is_retweet and index.options.exclude_rt:
                continue
            if contains_phrase(index.key(post.tokens), keyed):
                per_day[post.day] = per_day.get(post.day, 0) + 1
    entries = tuple(
        (day, count) for day, count in sorted(per_day.items())
        if count > 0 and _in_range(day, day_range)
    )
    return DailySeries(entries)


def peak_day(series: DailySeries, year: int) -> Optional[date]:
    """Earliest day of ``year`` with the maximum count, or None."""
    best: Optional[Tuple[int, date]] = None
    for day, count in series:
        if day.year != year:
            continue
        if best is None or count > best[0]:
            best = (count, day)
    return best[1] if best else None


def first_appearance_year(index: CorpusIndex, phrase: Sequence[str]) -> Optional[int]:
    series = daily_counts(index, phrase)
    return series.entries[0][0].year if series.entries else None


def sample_posts(
    index: CorpusIndex,
    phrase: Sequence[str],
    day_set: Iterable[date],
    k: int,
    seed: int,
) -> List[Post]:
    """Seeded uniform sample of up to ``k`` posts on ``day_set`` containing ``phrase``."""
    if k < 1:
        raise ArgumentError(ERROR_MESSAGES['bad_k'].format(k=k))
    candidates = index.matching_posts(phrase_of(phrase), day_set)
    return seeded_sample(candidates, k, seed)
