#!/usr/bin/env python
"""
Synthetic worlds with known entity lifespans for end-to-end checks.

Each entity is mentioned at a Poisson rate from birth to death; around its
death day the rate jumps and mentions carry ending cues. The generator
records which posts are disappearing contexts so every later stage can be
scored against ground truth.
"""

import json
import logging
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError

from .bilou import OUTSIDE, extract_spans
from .config import ERROR_MESSAGES
from .corpus_helper import derive_seed, ingest_posts, make_rng, post_to_record, tokenize
from .errors import ArgumentError, WorldSpecError
from .evaluation_helper import aggregate, first_detections, scores_from_counts
from .kb_helper import write_entity_list, write_update_dates
from .models import (
    CoarseType,
    DetectedSpan,
    EntityRecord,
    LabeledSentence,
    PipelineConfig,
    PipelinePaths,
    Polarity,
    Post,
    Scores,
    SupervisionConfig,
    WorldEntity,
    WorldSpec,
)
from .supervision_helper import label_mentions, read_conll, write_conll

# Configure logging
logger = logging.getLogger('det_synth')

SIBLING_SUBJECT = "it"

# Ending expressions seen in real disappearing contexts, with per-type variants.
DEFAULT_CUE_TEMPLATES: Dict[str, List[str]] = {
    "PERSON": [
        "RIP {e} gone too soon",
        "{e} has died at the age of 67",
        "so sad to hear that {e} passed away",
        "{e} died today after a long illness",
    ],
    "CREATIVE_WORK": [
        "{e} will not continue after this season",
        "{e} has been cancelled",
        "the final episode of {e} airs tonight",
        "cannot believe {e} is ending for good",
    ],
    "LOCATION": [
        "{e} will be demolished next week",
        "{e} is closing its doors for good",
        "last day at {e} before the demolition",
        "they are tearing down {e} tomorrow",
    ],
    "GROUP": [
        "{e} to disband after ten years",
        "{e} announced they will disband",
        "{e} is shutting down all of its stores",
        "{e} just ceased operations",
    ],
    "EVENT": [
        "{e} will not return next year",
        "{e} has been discontinued",
        "this is the last ever {e}",
        "organizers say {e} is cancelled forever",
    ],
    "SERVICE_PRODUCT": [
        "{e} will shut down next month",
        "{e} is shutting down",
        "{e} service ends today",
        "goodbye {e} it was discontinued",
    ],
}

DEFAULT_NEUTRAL_TEMPLATES = [
    "{e} was great today",
    "just saw {e} again",
    "what do you think about {e}",
    "{e} is trending again",
    "love {e} so much",
    "anyone else talking about {e}",
    "new photos of {e} this morning",
    "{e} and friends at the park",
]

DEFAULT_BACKGROUND_TEMPLATES = [
    "{w} {w} {w}",
    "just {w} the {w} today",
    "why is {w} so {w}",
    "{w} and {w} with {w}",
    "can't wait for {w}",
    "good morning {w} {w}",
    "my {w} is {w} again",
    "nobody talks about {w} anymore",
]

DEFAULT_BACKGROUND_VOCABULARY = [
    "coffee", "weather", "monday", "traffic", "music", "lunch", "weekend", "rain",
    "sunshine", "homework", "pizza", "game", "movie", "train", "bus", "office",
    "garden", "dog", "cat", "phone", "laptop", "friend", "family", "party",
    "dinner", "breakfast", "city", "beach", "mountain", "river", "book", "song",
    "video", "photo", "news", "sale", "market", "school", "class", "exam",
    "holiday", "summer", "winter", "spring", "autumn", "tea", "cake", "bread",
    "shoes", "jacket", "bike", "car", "street", "park", "museum", "stadium",
    "team", "match", "score", "goal", "ticket", "concert", "festival", "show",
    "series", "episode", "season", "store", "shop", "app", "website", "update",
    "bug", "code", "meeting", "deadline", "project", "idea", "plan", "trip",
    "flight", "hotel", "room", "kitchen", "window", "door", "light", "night",
    "morning", "evening", "tired", "happy", "busy", "late", "early", "quiet",
    "loud", "cold", "hot", "slow", "fast", "cheap", "expensive", "funny",
]

# One KB category per type that the default mapping resolves back to the type.
DEFAULT_CATEGORIES = {
    "PERSON": "Deaths",
    "CREATIVE_WORK": "American_television_series",
    "LOCATION": "Buildings_and_structures",
    "GROUP": "Musical_groups",
    "EVENT": "Sporting_events",
    "SERVICE_PRODUCT": "Internet_properties",
}

NAME_SYLLABLES = [
    "ka", "lo", "mi", "ra", "ven", "tor", "sa", "ne", "qui", "zi", "bel", "dor",
    "fin", "gal", "hal", "jun", "lin", "mor", "pel", "ris", "tam", "vel", "wyn",
    "xa", "yor", "bru", "cas", "del", "ect", "fro",
]

NAME_SUFFIXES = {
    "CREATIVE_WORK": "Chronicles",
    "LOCATION": "Tower",
    "EVENT": "Cup",
}


# -------------------------------------------------------------------------
# Gold world
# -------------------------------------------------------------------------

class GoldEntity(BaseModel):
    name: str
    coarse_type: CoarseType
    birth: date
    death: Optional[date] = None
    burst_start: Optional[date] = None
    burst_end: Optional[date] = None
    kb_update: Optional[date] = None
    category: Optional[str] = None
    cue_post_ids: List[str] = []
    first_cue_day: Optional[date] = None

    def in_burst(self, day: date) -> bool:
        return self.burst_start is not None and self.burst_start <= day <= self.burst_end


class GoldWorld(BaseModel):
    spec: WorldSpec
    posts: List[Post]
    gold: List[LabeledSentence]
    entities: List[GoldEntity]

    def entity(self, name: str) -> GoldEntity:
        for entity in self.entities:
            if entity.name == name:
                return entity
        raise KeyError(name)

    def positive_post_ids(self) -> Dict[str, Set[str]]:
        """Entity name -> ids of its gold disappearing-context posts."""
        found: Dict[str, Set[str]] = {e.name: set() for e in self.entities}
        for sentence in self.gold:
            if sentence.polarity is Polarity.POSITIVE:
                found[sentence.entity_id].add(sentence.post_id)
        return found

    def entity_records(self) -> List[EntityRecord]:
        """KB rows for the entities that end inside the world."""
        return [
            EntityRecord(
                canonical_name=e.name,
                aliases=(e.name,),
                disappearance_year=e.death.year,
                categories=(e.category,) if e.category else (),
                coarse_type=e.coarse_type,
            )
            for e in self.entities if e.death is not None
        ]

    def update_dates(self) -> Dict[str, date]:
        return {e.name: e.kb_update for e in self.entities if e.kb_update is not None}


def validate_spec(spec: WorldSpec) -> List[str]:
    violations = []
    if spec.start > spec.end:
        violations.append(f"start {spec.start} is after end {spec.end}")
    names = [e.name for e in spec.entities]
    if len(set(names)) != len(names):
        violations.append("entity names must be unique")
    if spec.background_posts_per_day < 0:
        violations.append("background_posts_per_day must be >= 0")
    if spec.background_posts_per_day > 0 and not (spec.background_templates and spec.background_vocabulary):
        violations.append("background posts need templates and vocabulary")
    if not 0.0 <= spec.retweet_probability <= 1.0:
        violations.append("retweet_probability must lie in [0, 1]")
    for e in spec.entities:
        if not tokenize(e.name):
            violations.append(f"{e.name!r}: name has no tokens")
        if e.death is not None and e.birth >= e.death:
            violations.append(f"{e.name}: birth {e.birth} is not before death {e.death}")
        if e.base_rate <= 0:
            violations.append(f"{e.name}: base_rate must be > 0")
        if e.burst_multiplier <= 0:
            violations.append(f"{e.name}: burst_multiplier must be > 0")
        if e.emergence_burst_multiplier < 0:
            violations.append(f"{e.name}: emergence_burst_multiplier must be >= 0")
        if not 0.0 <= e.cue_probability <= 1.0:
            violations.append(f"{e.name}: cue_probability must lie in [0, 1]")
        if e.kb_lag_days < 0:
            violations.append(f"{e.name}: kb_lag_days must be >= 0")
        if e.coarse_type is CoarseType.UNMAPPED:
            violations.append(f"{e.name}: entities need a tagged type")
        if e.death is not None and e.cue_probability > 0 and not spec.cue_templates.get(e.coarse_type.value):
            violations.append(f"{e.name}: no cue templates for {e.coarse_type.value}")
    if not spec.neutral_templates:
        violations.append("neutral_templates must not be empty")
    all_templates = [t for group in spec.cue_templates.values() for t in group] + spec.neutral_templates
    for template in all_templates:
        if "{e}" not in template:
            violations.append(f"template {template!r} lacks an {{e}} slot")
    return violations


def _fill_words(template: str, rng: np.random.Generator, vocabulary: Sequence[str]) -> str:
    parts = template.split("{w}")
    words = [vocabulary[int(i)] for i in rng.integers(0, len(vocabulary), len(parts) - 1)]
    return "".join(p + w for p, w in zip(parts, words)) + parts[-1]


def _days(start: date, end: date) -> Iterable[date]:
    for offset in range((end - start).days + 1):
        yield start + timedelta(days=offset)


def generate(spec: WorldSpec) -> GoldWorld:
    """Draw a world from ``spec``; the same spec always yields the same world."""
    violations = validate_spec(spec)
    if violations:
        raise WorldSpecError(violations="; ".join(violations))
    rng = make_rng(derive_seed(spec.seed, "world"))

    # (day, minute, sequence, text, is_retweet, entity or None, kind)
    drafts: List[Tuple[date, int, int, str, bool, Optional[str], str]] = []

    def draft(day: date, text: str, entity: Optional[str], kind: str) -> None:
        is_retweet = bool(rng.random() < spec.retweet_probability)
        if is_retweet:
            text = f"RT @user{int(rng.integers(1000))}: {text}"
        drafts.append((day, int(rng.integers(0, 24 * 60)), len(drafts), text, is_retweet, entity, kind))

    bursts: Dict[str, Tuple[date, date]] = {}
    for e in spec.entities:
        if e.death is not None:
            radius = timedelta(days=spec.burst_radius)
            bursts[e.name] = (e.death - radius, e.death + radius)

    for day in _days(spec.start, spec.end):
        for _ in range(int(rng.poisson(spec.background_posts_per_day))):
            template = spec.background_templates[int(rng.integers(len(spec.background_templates)))]
            draft(day, _fill_words(template, rng, spec.background_vocabulary), None, "background")
        for e in spec.entities:
            last_day = bursts[e.name][1] if e.name in bursts else spec.end
            if day < e.birth or day > last_day:
                continue
            in_burst = e.name in bursts and bursts[e.name][0] <= day <= bursts[e.name][1]
            rate = e.base_rate
            if in_burst:
                rate *= e.burst_multiplier
            elif day == e.birth and e.emergence_burst_multiplier > 0:
                rate *= e.emergence_burst_multiplier
            for _ in range(int(rng.poisson(rate))):
                cued = in_burst and rng.random() < e.cue_probability
                if cued and spec.cue_mode == "inline":
                    templates = spec.cue_templates[e.coarse_type.value]
                    text = templates[int(rng.integers(len(templates)))].replace("{e}", e.name)
                    draft(day, text, e.name, "cue")
                    continue
                text = spec.neutral_templates[int(rng.integers(len(spec.neutral_templates)))].replace("{e}", e.name)
                if cued:
                    draft(day, text, e.name, "paired")
                    templates = spec.cue_templates[e.coarse_type.value]
                    sibling = templates[int(rng.integers(len(templates)))].replace("{e}", SIBLING_SUBJECT)
                    draft(day, sibling, e.name, "sibling")
                else:
                    draft(day, text, e.name, "neutral")

    drafts.sort(key=lambda d: (d[0], d[1], d[2]))
    width = max(7, len(str(len(drafts))))
    types = {e.name: e.coarse_type.value for e in spec.entities}
    posts: List[Post] = []
    gold: List[LabeledSentence] = []
    cue_posts: Dict[str, List[Tuple[date, str]]] = {e.name: [] for e in spec.entities}
    for i, (day, minute, _, text, is_retweet, entity, kind) in enumerate(drafts):
        post_id = f"syn{i:0{width}d}"
        stamp = datetime.combine(day, time(minute // 60, minute % 60), tzinfo=timezone.utc)
        tokens = tuple(tokenize(text))
        posts.append(Post(id=post_id, timestamp=stamp, text=text, tokens=tokens, is_retweet=is_retweet))
        positive = kind in ("cue", "paired")
        tags = label_mentions(tokens, [entity], types[entity]) if positive else [OUTSIDE] * len(tokens)
        gold.append(LabeledSentence(
            tokens=tokens, tags=tuple(tags), date=day, entity_id=entity or "",
            polarity=Polarity.POSITIVE if positive else Polarity.NEGATIVE, post_id=post_id,
        ))
        if kind in ("cue", "sibling"):
            cue_posts[entity].append((day, post_id))

    entities = []
    for e in spec.entities:
        burst = bursts.get(e.name)
        cues = cue_posts[e.name]
        entities.append(GoldEntity(
            name=e.name,
            coarse_type=e.coarse_type,
            birth=e.birth,
            death=e.death,
            burst_start=burst[0] if burst else None,
            burst_end=burst[1] if burst else None,
            kb_update=e.death + timedelta(days=e.kb_lag_days) if e.death else None,
            category=e.category or DEFAULT_CATEGORIES.get(e.coarse_type.value),
            cue_post_ids=[post_id for _, post_id in cues],
            first_cue_day=min((day for day, _ in cues), default=None),
        ))
    logger.info(f"Generated {len(posts)} posts for {len(entities)} entities")
    return GoldWorld(spec=spec, posts=posts, gold=gold, entities=entities)


# -------------------------------------------------------------------------
# Reference world
# -------------------------------------------------------------------------

def _names(rng: np.random.Generator, kinds: Sequence[str]) -> List[str]:
    names: List[str] = []
    taken: Set[str] = set()
    for kind in kinds:
        while True:
            parts = []
            for _ in range(2 if kind == "PERSON" else 1):
                syllables = rng.choice(NAME_SYLLABLES, size=int(rng.integers(2, 4)))
                parts.append("".join(syllables).capitalize())
            if kind in NAME_SUFFIXES:
                parts.append(NAME_SUFFIXES[kind])
            name = " ".join(parts)
            if name not in taken and name.lower() not in DEFAULT_BACKGROUND_VOCABULARY:
                taken.add(name)
                names.append(name)
                break
    return names


def reference_world(
    seed: int = 0,
    cue_mode: str = "inline",
    cue_probability: float = 1.0,
    emergence_burst_multiplier: float = 0.0,
    n_train: int = 24,
    n_test: int = 20,
    n_persistent: int = 6,
) -> WorldSpec:
    """Fifty entities over two years: deaths in the second half (train years)
    and in the first half of the final year (test year), plus a few entities
    that never end. The first half-year supplies pre-year negatives.
    """
    rng = make_rng(derive_seed(seed, "reference"))
    types = [t.value for t in CoarseType if t is not CoarseType.UNMAPPED]
    total = n_train + n_test + n_persistent
    kinds = [types[i % len(types)] for i in range(total)]
    names = _names(rng, kinds)
    start, end = date(2017, 7, 1), date(2019, 6, 30)
    entities = []
    for i, (name, kind) in enumerate(zip(names, kinds)):
        birth = start + timedelta(days=int(rng.integers(0, 120)))
        if i < n_train:
            death = date(2018, 2, 1) + timedelta(days=int(rng.integers(0, 300)))
        elif i < n_train + n_test:
            death = date(2019, 1, 20) + timedelta(days=int(rng.integers(0, 140)))
        else:
            death = None
        entities.append(WorldEntity(
            name=name,
            coarse_type=CoarseType(kind),
            birth=birth,
            death=death,
            base_rate=0.5,
            burst_multiplier=20.0,
            cue_probability=cue_probability,
            kb_lag_days=30,
            emergence_burst_multiplier=emergence_burst_multiplier,
            category=DEFAULT_CATEGORIES[kind],
        ))
    return WorldSpec(
        entities=entities,
        start=start,
        end=end,
        cue_templates=DEFAULT_CUE_TEMPLATES,
        neutral_templates=DEFAULT_NEUTRAL_TEMPLATES,
        background_templates=DEFAULT_BACKGROUND_TEMPLATES,
        background_vocabulary=DEFAULT_BACKGROUND_VOCABULARY,
        background_posts_per_day=25.0,
        cue_mode=cue_mode,
        seed=seed,
    )


def reference_pipeline_config(world_dir: Path, out_dir: Path, seed: int = 0) -> PipelineConfig:
    """Desk-scale settings whose train and test years match :func:`reference_world`."""
    config = PipelineConfig.desk_scale()
    return config.model_copy(update={
        "paths": PipelinePaths(
            corpus=world_dir / "posts.jsonl",
            entities=world_dir / "entities.tsv",
            update_dates=world_dir / "update_dates.tsv",
            output_dir=out_dir,
        ),
        "supervision": SupervisionConfig(train_years=(2017, 2018), test_year=2019, seed=seed),
        "seed": seed,
    })


# -------------------------------------------------------------------------
# Files
# -------------------------------------------------------------------------

WORLD_FILES = {
    "posts": "posts.jsonl",
    "gold": "gold.conll",
    "entities": "entities.tsv",
    "update_dates": "update_dates.tsv",
    "world": "world.json",
}


def write_world(world: GoldWorld, out_dir: Path) -> Dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {key: out_dir / name for key, name in WORLD_FILES.items()}
    with open(paths["posts"], "w", encoding="utf-8", newline="\n") as f:
        for post in world.posts:
            f.write(json.dumps(post_to_record(post), ensure_ascii=False, sort_keys=True) + "\n")
    write_conll(world.gold, paths["gold"])
    write_entity_list(world.entity_records(), paths["entities"])
    write_update_dates(world.update_dates(), paths["update_dates"])
    payload = {
        "spec": world.spec.model_dump(mode="json"),
        "entities": [e.model_dump(mode="json") for e in world.entities],
    }
    paths["world"].write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_world(out_dir: Path) -> GoldWorld:
    try:
        payload = json.loads((out_dir / WORLD_FILES["world"]).read_text(encoding="utf-8"))
        spec = WorldSpec(**payload["spec"])
        entities = [GoldEntity(**e) for e in payload["entities"]]
    except (OSError, ValueError, KeyError, ValidationError) as e:
        raise WorldSpecError(violations=f"cannot read {out_dir / WORLD_FILES['world']}: {e}")
    index, _ = ingest_posts(out_dir / WORLD_FILES["posts"])
    return GoldWorld(
        spec=spec,
        posts=list(index.iter_posts()),
        gold=read_conll(out_dir / WORLD_FILES["gold"]),
        entities=entities,
    )


def load_world_spec(path: Path) -> WorldSpec:
    """Read a WorldSpec JSON file (same family as the pipeline config)."""
    try:
        return WorldSpec(**json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError, ValidationError) as e:
        raise WorldSpecError(violations=str(e))


# -------------------------------------------------------------------------
# Oracle
# -------------------------------------------------------------------------

class LeadSummary(BaseModel):
    entities: int = 0
    mean: Optional[float] = None
    median: Optional[float] = None


class OracleReport(BaseModel):
    positives: int = 0
    ds_label_precision: Optional[float] = None
    positive_day_accuracy: Optional[float] = None
    end_to_end: Optional[Scores] = None
    found: int = 0
    targets: int = 0
    lead_vs_kb: LeadSummary = LeadSummary()
    lead_vs_death: LeadSummary = LeadSummary()


def _check_entities(world: GoldWorld, names: Iterable[str]) -> None:
    known = {e.name for e in world.entities}
    unknown = sorted(set(names) - known)
    if unknown:
        raise ArgumentError(ERROR_MESSAGES['entity_mismatch'].format(names=", ".join(unknown)))


def supervision_precision(world: GoldWorld, supervision: Sequence[LabeledSentence]) -> Tuple[int, Optional[float], Optional[float]]:
    """(positives, share that are gold disappearing contexts, share of entities whose positive day is in the burst)."""
    positives = [s for s in supervision if s.polarity is Polarity.POSITIVE]
    _check_entities(world, (s.entity_id for s in positives))
    if not positives:
        return 0, None, None
    gold_ids = world.positive_post_ids()
    correct = sum(s.post_id in gold_ids[s.entity_id] for s in positives)
    days: Dict[str, Set[date]] = {}
    for s in positives:
        days.setdefault(s.entity_id, set()).add(s.date)
    on_burst = sum(
        all(world.entity(name).in_burst(d) for d in entity_days)
        for name, entity_days in days.items()
    )
    return len(positives), correct / len(positives), on_burst / len(days)


def score_against_gold(
    world: GoldWorld,
    supervision: Optional[Sequence[LabeledSentence]] = None,
    detections: Optional[Sequence[DetectedSpan]] = None,
    tagged_post_ids: Optional[Iterable[str]] = None,
    year: Optional[int] = None,
) -> OracleReport:
    """Compare pipeline outputs with the world's ground truth.

    Detections are scored as exact (post, start, end, type) spans over the
    posts in ``tagged_post_ids`` (every world post by default). Lead days are
    measured against both the KB update day and the true death day.
    """
    report = OracleReport()
    if supervision is not None:
        report.positives, report.ds_label_precision, report.positive_day_accuracy = supervision_precision(world, supervision)
    if detections is None:
        return report

    covered = set(tagged_post_ids) if tagged_post_ids is not None else {p.id for p in world.posts}
    gold_spans = {
        (s.post_id, start, end, kind)
        for s in world.gold if s.post_id in covered
        for start, end, kind in extract_spans(s.tags)
    }
    predicted = {(d.post_id, d.start, d.end, d.coarse_type) for d in detections if d.post_id in covered}
    tp = len(gold_spans & predicted)
    report.end_to_end = scores_from_counts(tp, len(predicted) - tp, len(gold_spans) - tp)

    records = world.entity_records()
    if year is not None:
        records = [r for r in records if r.disappearance_year == year]
    found = first_detections(detections, records, year)
    report.targets, report.found = len(records), len(found)
    kb_leads = [(world.entity(n).kb_update - d).days for n, d in found.items()]
    death_leads = [(world.entity(n).death - d).days for n, d in found.items()]
    report.lead_vs_kb = LeadSummary(entities=len(kb_leads), **dict(zip(("mean", "median"), aggregate(kb_leads))))
    report.lead_vs_death = LeadSummary(entities=len(death_leads), **dict(zip(("mean", "median"), aggregate(death_leads))))
    return report
