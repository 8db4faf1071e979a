#!/usr/bin/env python
"""
BILOU tag scheme helpers: tag set construction, the legal-transition mask,
validation and span extraction.
"""

from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import IllegalTagSequenceError

OUTSIDE = "O"
PREFIXES = ("B", "I", "L", "U")
START = "<start>"
END = "<end>"

Span = Tuple[int, int, str]


def split_tag(tag: str) -> Tuple[str, Optional[str]]:
    """Split ``B-GROUP`` into ``("B", "GROUP")``; ``O`` gives ``("O", None)``."""
    if tag == OUTSIDE:
        return OUTSIDE, None
    prefix, sep, kind = tag.partition("-")
    if not sep or prefix not in PREFIXES or not kind:
        raise IllegalTagSequenceError(f"Malformed tag: {tag!r}")
    return prefix, kind


def is_legal_transition(prev: str, tag: str) -> bool:
    """Whether ``tag`` may follow ``prev``; ``prev`` may be START and ``tag`` END."""
    prev_prefix, prev_kind = (START, None) if prev == START else split_tag(prev)
    if tag == END:
        return prev_prefix in (OUTSIDE, "L", "U")
    prefix, kind = split_tag(tag)
    if prev_prefix in ("B", "I"):
        return prefix in ("I", "L") and kind == prev_kind
    return prefix in (OUTSIDE, "B", "U")


def validate_bilou(tags: Sequence[str]) -> None:
    """Raise IllegalTagSequenceError naming the first illegal position."""
    prev = START
    for position, tag in enumerate(tags):
        if not is_legal_transition(prev, tag):
            raise IllegalTagSequenceError(position=position, prev=prev, tag=tag)
        prev = tag
    if tags and not is_legal_transition(prev, END):
        raise IllegalTagSequenceError(position=len(tags), prev=prev, tag=END)


def is_valid_bilou(tags: Sequence[str]) -> bool:
    try:
        validate_bilou(tags)
    except IllegalTagSequenceError:
        return False
    return True


def extract_spans(tags: Sequence[str]) -> List[Span]:
    """Return ``(start, end, type)`` spans, ``end`` exclusive.

    Legal sequences map one-to-one onto spans. Illegal fragments (an I or L
    without an open span of the same type) are dropped.
    """
    spans: List[Span] = []
    open_start: Optional[int] = None
    open_kind: Optional[str] = None
    for i, tag in enumerate(tags):
        prefix, kind = split_tag(tag)
        if prefix == "U":
            spans.append((i, i + 1, kind))
            open_start = open_kind = None
        elif prefix == "B":
            open_start, open_kind = i, kind
        elif prefix == "I":
            if open_kind != kind:
                open_start = open_kind = None
        elif prefix == "L":
            if open_start is not None and open_kind == kind:
                spans.append((open_start, i + 1, kind))
            open_start = open_kind = None
        else:
            open_start = open_kind = None
    return spans


def spans_to_tags(length: int, spans: Iterable[Span]) -> List[str]:
    tags = [OUTSIDE] * length
    for start, end, kind in spans:
        if end - start == 1:
            tags[start] = f"U-{kind}"
            continue
        tags[start] = f"B-{kind}"
        for i in range(start + 1, end - 1):
            tags[i] = f"I-{kind}"
        tags[end - 1] = f"L-{kind}"
    return tags


class TagSet:
    """Tags ``O`` plus ``{B,I,L,U} x types`` with their legal-transition masks."""

    def __init__(self, types: Sequence[str]):
        self.types: List[str] = list(types)
        self.tags: List[str] = [OUTSIDE] + [
            f"{prefix}-{kind}" for kind in self.types for prefix in PREFIXES
        ]
        self.index: Dict[str, int] = {tag: i for i, tag in enumerate(self.tags)}
        size = len(self.tags)
        self.transition_mask = np.zeros((size, size), dtype=bool)
        self.start_mask = np.zeros(size, dtype=bool)
        self.end_mask = np.zeros(size, dtype=bool)
        for i, prev in enumerate(self.tags):
            self.start_mask[i] = is_legal_transition(START, prev)
            self.end_mask[i] = is_legal_transition(prev, END)
            for j, tag in enumerate(self.tags):
                self.transition_mask[i, j] = is_legal_transition(prev, tag)

    def __len__(self) -> int:
        return len(self.tags)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TagSet) and other.types == self.types

    def __repr__(self) -> str:
        return f"TagSet(types={self.types!r})"

    def encode(self, tags: Sequence[str]) -> List[int]:
        try:
            return [self.index[tag] for tag in tags]
        except KeyError as e:
            raise IllegalTagSequenceError(f"Tag {e.args[0]!r} not in tag set {self.types}")

    def decode(self, indices: Iterable[int]) -> List[str]:
        return [self.tags[int(i)] for i in indices]

    def is_legal_path(self, indices: Sequence[int]) -> bool:
        if not len(indices):
            return True
        if not self.start_mask[indices[0]] or not self.end_mask[indices[-1]]:
            return False
        return all(self.transition_mask[a, b] for a, b in zip(indices, indices[1:]))
