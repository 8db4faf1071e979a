#!/usr/bin/env python
"""
Helper functions for scoring tagger output and measuring detection immediacy
"""

import io
import json
import logging
from collections import Counter, defaultdict
from datetime import date
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from .bilou import extract_spans
from .config import ERROR_MESSAGES
from .corpus_helper import derive_seed, seeded_sample
from .errors import AlignmentError, ArgumentError, InputFormatError
from .kb_helper import normalize_alias
from .models import (
    TAGGED_TYPES,
    CoarseType,
    DetectedSpan,
    DetectionEvent,
    EntityRecord,
    EvalReport,
    ImmediacyReport,
    ImmediacyRow,
    LabeledSentence,
    Polarity,
    Scores,
)
from .supervision_helper import TypeStatistics

# Configure logging
logger = logging.getLogger('det_evaluation')

TOTAL_LABEL = "TOTAL"
TOTAL_WITHOUT_PERSON = "TOTAL w/o PERSON"
FORMATS = ("text", "json", "tsv")


# -------------------------------------------------------------------------
# CoNLL span scoring
# -------------------------------------------------------------------------

def scores_from_counts(tp: int, fp: int, fn: int) -> Scores:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Scores(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn)


def conll_score(
    gold: Sequence[Union[LabeledSentence, Sequence[str]]],
    pred: Sequence[Sequence[str]],
) -> EvalReport:
    """Exact (start, end, type) span matching, micro-averaged, with per-type rows."""
    if len(gold) != len(pred):
        raise AlignmentError(f"{len(gold)} gold sentences vs {len(pred)} predictions")
    counts: Dict[str, Counter] = defaultdict(Counter)
    for i, (gold_item, pred_tags) in enumerate(zip(gold, pred)):
        gold_tags = gold_item.tags if isinstance(gold_item, LabeledSentence) else gold_item
        if len(gold_tags) != len(pred_tags):
            raise AlignmentError(index=i, left=len(gold_tags), right=len(pred_tags))
        gold_spans = set(extract_spans(gold_tags))
        pred_spans = set(extract_spans(pred_tags))
        for span in gold_spans & pred_spans:
            counts[span[2]]["tp"] += 1
        for span in pred_spans - gold_spans:
            counts[span[2]]["fp"] += 1
        for span in gold_spans - pred_spans:
            counts[span[2]]["fn"] += 1
    per_type = {
        kind: scores_from_counts(c["tp"], c["fp"], c["fn"])
        for kind, c in sorted(counts.items())
    }
    micro = scores_from_counts(*(sum(c[k] for c in counts.values()) for k in ("tp", "fp", "fn")))
    return EvalReport(micro=micro, per_type=per_type)


# -------------------------------------------------------------------------
# Immediacy
# -------------------------------------------------------------------------

def lead_days(event: DetectionEvent) -> int:
    """Positive when the detection came before the KB update."""
    return (event.kb_update - event.first_detection).days


def aggregate(leads: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    if not len(leads):
        return None, None
    values = np.asarray(leads, dtype=np.float64)
    return float(values.mean()), float(np.median(values))


def first_detections(
    detections: Iterable[DetectedSpan],
    targets: Sequence[EntityRecord],
    year: Optional[int] = None,
    fold_case: bool = True,
    match_type: bool = False,
) -> Dict[str, date]:
    """Earliest day on which a detection's surface equals one of a target's aliases."""
    key = (lambda s: normalize_alias(s).casefold()) if fold_case else normalize_alias
    by_alias: Dict[str, List[EntityRecord]] = defaultdict(list)
    for target in targets:
        for alias in {key(a) for a in target.aliases}:
            by_alias[alias].append(target)
    first: Dict[str, date] = {}
    for span in detections:
        if year is not None and span.date.year != year:
            continue
        for target in by_alias.get(key(span.surface), ()):
            if match_type and span.coarse_type != target.coarse_type.value:
                continue
            name = target.canonical_name
            if name not in first or span.date < first[name]:
                first[name] = span.date
    return first


def _row(label: str, targets: Sequence[EntityRecord], events: Mapping[str, DetectionEvent], found: Mapping[str, date]) -> ImmediacyRow:
    hits = [t for t in targets if t.canonical_name in found]
    leads = [lead_days(events[t.canonical_name]) for t in hits if t.canonical_name in events]
    mean, median = aggregate(leads)
    return ImmediacyRow(
        label=label,
        targets=len(targets),
        found=len(hits),
        ratio=len(hits) / len(targets) if targets else 0.0,
        mean_lead=mean,
        median_lead=median,
    )


def relative_recall(
    detections: Iterable[DetectedSpan],
    targets: Sequence[EntityRecord],
    year: Optional[int] = None,
    update_dates: Optional[Mapping[str, date]] = None,
    fold_case: bool = True,
    match_type: bool = False,
) -> Tuple[ImmediacyReport, List[DetectionEvent]]:
    """Share of KB entities the tagger discovered, grouped by their KB type.

    Any predicted type counts unless ``match_type`` is set. Lead statistics
    cover found entities that have a KB update date.
    """
    update_dates = update_dates or {}
    found = first_detections(detections, targets, year, fold_case, match_type)
    events = {
        name: DetectionEvent(entity_id=name, first_detection=day, kb_update=update_dates[name])
        for name, day in sorted(found.items()) if name in update_dates
    }
    missing_updates = sorted(set(found) - set(update_dates))
    if missing_updates:
        logger.info(f"{len(missing_updates)} found entities have no KB update date")

    rows = []
    for kind in TAGGED_TYPES + [CoarseType.UNMAPPED.value]:
        group = [t for t in targets if t.coarse_type.value == kind]
        if group:
            rows.append(_row(kind, group, events, found))
    rows.append(_row(TOTAL_LABEL, targets, events, found))
    rows.append(_row(
        TOTAL_WITHOUT_PERSON,
        [t for t in targets if t.coarse_type is not CoarseType.PERSON],
        events, found,
    ))
    logger.info(f"Found {len(found)} of {len(targets)} target entities")
    return ImmediacyReport(rows=rows), list(events.values())


# -------------------------------------------------------------------------
# Annotation agreement
# -------------------------------------------------------------------------

def fleiss_kappa(ratings: Sequence[Sequence[int]], raters_per_item: int) -> float:
    """Chance-corrected agreement for an item x category count matrix."""
    table = np.asarray(ratings, dtype=np.float64)
    n = raters_per_item
    if n < 2:
        raise ArgumentError(f"Fleiss kappa needs at least 2 raters per item (got {n})")
    for row, total in enumerate(table.sum(axis=1)):
        if total != n:
            raise InputFormatError(ERROR_MESSAGES['rating_rows'].format(row=row, total=int(total), n=n))
    agreement = ((table ** 2).sum(axis=1) - n) / (n * (n - 1))
    p_bar = agreement.mean()
    shares = table.sum(axis=0) / (len(table) * n)
    p_e = (shares ** 2).sum()
    if np.isclose(p_e, 1.0):
        return 1.0
    return float((p_bar - p_e) / (1.0 - p_e))


def sample_for_annotation(
    positives: Sequence[LabeledSentence],
    per_entity: int = 3,
    seed: int = 0,
) -> List[LabeledSentence]:
    """Up to ``per_entity`` random positive posts per entity, in entity order."""
    by_entity: Dict[str, List[LabeledSentence]] = defaultdict(list)
    for sentence in positives:
        if sentence.polarity is Polarity.POSITIVE:
            by_entity[sentence.entity_id].append(sentence)
    sample: List[LabeledSentence] = []
    for entity_id in sorted(by_entity):
        group = sorted(by_entity[entity_id], key=lambda s: s.sort_key)
        chosen = seeded_sample(group, min(per_entity, len(group)), derive_seed(seed, "annotate", entity_id))
        sample.extend(sorted(chosen, key=lambda s: s.sort_key))
    return sample


def adopt_by_majority(
    judgements: Mapping[str, Sequence[bool]],
    min_agree: int = 2,
) -> Tuple[List[str], np.ndarray]:
    """Keep items at least ``min_agree`` annotators accepted.

    Returns the adopted ids and the ``[accept, reject]`` ratings matrix in
    sorted id order, ready for :func:`fleiss_kappa`.
    """
    adopted: List[str] = []
    rows: List[List[int]] = []
    for item_id in sorted(judgements):
        votes = list(judgements[item_id])
        accepted = sum(bool(v) for v in votes)
        rows.append([accepted, len(votes) - accepted])
        if accepted >= min_agree:
            adopted.append(item_id)
    return adopted, np.asarray(rows, dtype=np.int64).reshape(-1, 2)


# -------------------------------------------------------------------------
# Rendering
# -------------------------------------------------------------------------

def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def _table(report: Any) -> Tuple[List[str], List[List[Any]]]:
    if isinstance(report, EvalReport):
        header = ["type", "precision", "recall", "f1", "tp", "fp", "fn"]
        rows = [[kind, s.precision, s.recall, s.f1, s.tp, s.fp, s.fn] for kind, s in report.per_type.items()]
        m = report.micro
        rows.append(["micro", m.precision, m.recall, m.f1, m.tp, m.fp, m.fn])
        return header, rows
    if isinstance(report, ImmediacyReport):
        header = ["type", "targets", "found", "ratio", "mean_lead", "median_lead"]
        rows = [[r.label, r.targets, r.found, r.ratio, r.mean_lead, r.median_lead] for r in report.rows]
        return header, rows
    header = ["type", "category", "entities", "posts", "positives", "negatives"]
    rows = []
    for kind, stats in report.items():
        rows.append([kind, "", stats.entities, stats.posts, stats.positives, stats.negatives])
        for category, cat in stats.categories.items():
            rows.append([kind, category, cat.entities, cat.posts, "", ""])
    return header, rows


def _dump(report: Any) -> Any:
    if isinstance(report, BaseModel):
        return report.model_dump(mode="json")
    return {k: (v.model_dump(mode="json") if isinstance(v, BaseModel) else v) for k, v in report.items()}


def render_report(report: Any, fmt: str = "text") -> str:
    """Serialize an EvalReport, ImmediacyReport or dataset statistics table.

    ``json`` is lossless; ``tsv`` prints numbers at 6 significant digits;
    ``text`` is an aligned table with the same columns as ``tsv``.
    """
    if fmt == "json":
        return json.dumps(_dump(report), indent=2, sort_keys=True) + "\n"
    header, rows = _table(report)
    if fmt == "tsv":
        out = io.StringIO()
        out.write("\t".join(header) + "\n")
        for row in rows:
            out.write("\t".join(_fmt(v) if v != "" else "" for v in row) + "\n")
        return out.getvalue()
    if fmt == "text":
        cells = [header] + [[_fmt(v) if v != "" else "" for v in row] for row in rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in cells]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines) + "\n"
    raise ArgumentError(f"Unknown report format {fmt!r}; expected one of {', '.join(FORMATS)}")


def parse_report(payload: str) -> Any:
    """Inverse of the JSON rendering, picking the report kind from its keys."""
    data = json.loads(payload)
    if "micro" in data:
        return EvalReport(**data)
    if "rows" in data:
        return ImmediacyReport(**data)
    return {kind: TypeStatistics(**stats) for kind, stats in data.items()}
