#!/usr/bin/env python
"""
Helper functions for loading ended-entity lists and mapping categories to types
"""

import fnmatch
import logging
from collections import defaultdict
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from dateutil.parser import isoparse

from .config import ERROR_MESSAGES
from .corpus_helper import CorpusIndex, derive_seed, first_appearance_year, phrase_of, seeded_sample
from .errors import InputFormatError
from .models import CoarseType, EntityRecord

# Configure logging
logger = logging.getLogger('det_kb')

HEADER_CELL = "canonical_name"


class TypeMapping:
    """Ordered ``(pattern, type)`` rules; the first matching rule wins.

    A pattern containing ``*``, ``?`` or ``[`` is an anchored glob; anything
    else matches as a literal prefix of the category.
    """

    def __init__(self, rules: Sequence[Tuple[str, CoarseType]]):
        self.rules: List[Tuple[str, CoarseType]] = [(p, CoarseType(t)) for p, t in rules]

    def match(self, category: str) -> Optional[CoarseType]:
        for pattern, coarse_type in self.rules:
            if any(ch in pattern for ch in "*?["):
                if fnmatch.fnmatchcase(category, pattern):
                    return coarse_type
            elif category.startswith(pattern):
                return coarse_type
        return None


# Category assignments observed in the English ending-entity lists.
DEFAULT_TYPE_MAPPING = TypeMapping([
    ("Deaths", CoarseType.PERSON),
    ("People", CoarseType.PERSON),
    ("*_television_series", CoarseType.CREATIVE_WORK),
    ("Web_series", CoarseType.CREATIVE_WORK),
    ("*_comics", CoarseType.CREATIVE_WORK),
    ("Radio_programs", CoarseType.CREATIVE_WORK),
    ("Buildings_and_structures", CoarseType.LOCATION),
    ("Educational_institutions", CoarseType.LOCATION),
    ("Restaurants", CoarseType.LOCATION),
    ("Museums", CoarseType.LOCATION),
    ("Shopping_malls", CoarseType.LOCATION),
    ("Musical_groups", CoarseType.GROUP),
    ("Retail_companies", CoarseType.GROUP),
    ("Airlines", CoarseType.GROUP),
    ("Companies", CoarseType.GROUP),
    ("Organizations", CoarseType.GROUP),
    ("Sporting_events", CoarseType.EVENT),
    ("Sports_leagues", CoarseType.EVENT),
    ("Events", CoarseType.EVENT),
    ("Festivals", CoarseType.EVENT),
    ("Magazines", CoarseType.SERVICE_PRODUCT),
    ("Internet_properties", CoarseType.SERVICE_PRODUCT),
    ("Products_and_services", CoarseType.SERVICE_PRODUCT),
    ("Newspapers", CoarseType.SERVICE_PRODUCT),
    ("Radio_stations", CoarseType.SERVICE_PRODUCT),
])


def normalize_alias(alias: str) -> str:
    return " ".join(alias.split())


def map_category_to_type(categories: Sequence[str], mapping: TypeMapping = DEFAULT_TYPE_MAPPING) -> CoarseType:
    """First category (in listed order) with a matching rule decides."""
    for category in categories:
        coarse_type = mapping.match(category)
        if coarse_type is not None:
            return coarse_type
    return CoarseType.UNMAPPED


def load_type_mapping(path: Path) -> TypeMapping:
    """Read ``pattern<TAB>TYPE`` lines; ``#`` starts a comment."""
    rules = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.split("#", 1)[0].rstrip("\n").strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1].strip() not in CoarseType.__members__:
                raise InputFormatError(path=path, line=line_no, problem=f"invalid mapping rule {line!r}")
            rules.append((parts[0].strip(), CoarseType[parts[1].strip()]))
    return TypeMapping(rules)


def _dedupe_aliases(canonical: str, aliases: Sequence[str]) -> Tuple[str, ...]:
    ordered: List[str] = []
    for alias in [canonical, *aliases]:
        alias = normalize_alias(alias)
        if alias and alias not in ordered:
            ordered.append(alias)
    return tuple(ordered)


def load_entity_list(path: Path, mapping: TypeMapping = DEFAULT_TYPE_MAPPING) -> List[EntityRecord]:
    """Read the ended-entity TSV, skipping (and logging) malformed rows."""
    records: List[EntityRecord] = []
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise InputFormatError(ERROR_MESSAGES['unreadable_source'].format(what="entities", path=path, error=e))
    with handle:
        for row_no, line in enumerate(handle, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cells = line.split("\t")
            if row_no == 1 and cells[0] == HEADER_CELL:
                continue
            if len(cells) != 5:
                logger.warning(f"Skipping row {row_no} of {path}: expected 5 columns, got {len(cells)}")
                continue
            name, aliases, year, categories, ambiguous = cells
            name = normalize_alias(name)
            if not name:
                logger.warning(f"Skipping row {row_no} of {path}: empty canonical name")
                continue
            try:
                year_value = int(year)
            except ValueError:
                logger.warning(f"Skipping row {row_no} of {path}: invalid year {year!r}")
                continue
            if not 1 <= year_value <= 9999:
                logger.warning(f"Skipping row {row_no} of {path}: invalid year {year!r}")
                continue
            if ambiguous.strip() not in ("0", "1"):
                logger.warning(f"Skipping row {row_no} of {path}: ambiguous flag must be 0 or 1")
                continue
            category_list = tuple(c.strip() for c in categories.split("|") if c.strip())
            records.append(EntityRecord(
                canonical_name=name,
                aliases=_dedupe_aliases(name, aliases.split("|")),
                disappearance_year=year_value,
                categories=category_list,
                coarse_type=map_category_to_type(category_list, mapping),
                ambiguous=ambiguous.strip() == "1",
            ))
    logger.info(f"Loaded {len(records)} entities from {path}")
    return records


def write_entity_list(records: Sequence[EntityRecord], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("canonical_name\taliases\tdisappearance_year\tcategories\tambiguous\n")
        for record in records:
            f.write("\t".join([
                record.canonical_name,
                "|".join(record.aliases),
                str(record.disappearance_year),
                "|".join(record.categories),
                "1" if record.ambiguous else "0",
            ]) + "\n")


def filter_entities(
    records: Sequence[EntityRecord],
    index: CorpusIndex,
    caps: Optional[Dict[str, int]] = None,
    seed: int = 0,
) -> List[EntityRecord]:
    """Drop ambiguous entities and entities first seen in their disappearance year,
    then undersample capped types.
    """
    kept: List[EntityRecord] = []
    for record in records:
        if record.ambiguous:
            logger.debug(f"Dropping ambiguous entity {record.canonical_name}")
            continue
        first_year = first_appearance_year(index, phrase_of(record.canonical_name))
        if first_year == record.disappearance_year:
            logger.debug(f"Dropping {record.canonical_name}: first seen in its disappearance year")
            continue
        kept.append(record)

    caps = caps or {}
    by_type: Dict[str, List[EntityRecord]] = defaultdict(list)
    for record in kept:
        by_type[record.coarse_type.value].append(record)
    selected = set()
    for coarse_type, group in by_type.items():
        cap = caps.get(coarse_type)
        if cap is None or len(group) <= cap:
            selected.update(id(r) for r in group)
            continue
        ordered = sorted(group, key=lambda r: (r.canonical_name, r.disappearance_year))
        sample = seeded_sample(ordered, cap, derive_seed(seed, "cap", coarse_type))
        selected.update(id(r) for r in sample)
        logger.info(f"Undersampled {coarse_type} from {len(group)} to {cap} entities")
    return [r for r in kept if id(r) in selected]


def load_update_dates(path: Path) -> Dict[str, date]:
    """Read ``canonical_name<TAB>YYYY-MM-DD`` rows."""
    updates: Dict[str, date] = {}
    with open(path, "r", encoding="utf-8") as f:
        for row_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cells = line.split("\t")
            if row_no == 1 and cells[0] == HEADER_CELL:
                continue
            try:
                name, day = cells
                updates[normalize_alias(name)] = isoparse(day).date()
            except ValueError:
                logger.warning(f"Skipping row {row_no} of {path}: expected name<TAB>YYYY-MM-DD")
    return updates


def write_update_dates(updates: Dict[str, date], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for name, day in sorted(updates.items()):
            f.write(f"{name}\t{day.isoformat()}\n")
