#!/usr/bin/env python
"""
Data models and validated configuration objects shared by all stages.
"""

from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .bilou import OUTSIDE, validate_bilou
from .config import (
    CASELESS_LANGUAGES,
    DEFAULT_EXCLUDE_RT,
    DEFAULT_FOLD_CASE,
    DEFAULT_LANG,
    DEFAULT_MAX_NGRAM,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEED,
)


class CoarseType(str, Enum):
    PERSON = "PERSON"
    CREATIVE_WORK = "CREATIVE_WORK"
    LOCATION = "LOCATION"
    GROUP = "GROUP"
    EVENT = "EVENT"
    SERVICE_PRODUCT = "SERVICE_PRODUCT"
    UNMAPPED = "UNMAPPED"


# Types the tagger predicts; UNMAPPED entities never receive labels.
TAGGED_TYPES: List[str] = [t.value for t in CoarseType if t is not CoarseType.UNMAPPED]


class Polarity(str, Enum):
    POSITIVE = "POS"
    NEGATIVE = "NEG"


# -------------------------------------------------------------------------
# Corpus
# -------------------------------------------------------------------------

class Post(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    timestamp: datetime
    text: str
    tokens: Tuple[str, ...]
    is_retweet: bool = False
    lang: str = "en"

    @property
    def day(self) -> date:
        return self.timestamp.date()


class CorpusOptions(BaseModel):
    """Phrase matching options. ``fold_case`` left unset follows ``language``:
    on for English, off for Japanese."""

    language: str = DEFAULT_LANG
    fold_case: Optional[bool] = DEFAULT_FOLD_CASE
    exclude_rt: bool = DEFAULT_EXCLUDE_RT
    max_ngram: int = Field(DEFAULT_MAX_NGRAM, ge=1)

    @model_validator(mode="after")
    def _fold_case_by_language(self) -> "CorpusOptions":
        if self.fold_case is None:
            self.fold_case = self.language not in CASELESS_LANGUAGES
        return self


# -------------------------------------------------------------------------
# Knowledge base
# -------------------------------------------------------------------------

class EntityRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    canonical_name: str
    aliases: Tuple[str, ...]
    disappearance_year: int
    categories: Tuple[str, ...] = ()
    coarse_type: CoarseType = CoarseType.UNMAPPED
    ambiguous: bool = False

    @field_validator("aliases")
    @classmethod
    def _non_empty_aliases(cls, value: Tuple[str, ...]) -> Tuple[str, ...]:
        if not value:
            raise ValueError("aliases must not be empty")
        return value


# -------------------------------------------------------------------------
# Supervision
# -------------------------------------------------------------------------

class SupervisionConfig(BaseModel):
    k: int = Field(100, ge=1)
    train_years: Tuple[int, int] = (2012, 2018)
    test_year: int = 2019
    dev_fraction: float = Field(0.10, gt=0.0, lt=1.0)
    seed: int = DEFAULT_SEED
    label_all_mentions: bool = True

    @model_validator(mode="after")
    def _years_disjoint(self) -> "SupervisionConfig":
        first, last = self.train_years
        if first > last:
            raise ValueError(f"train_years {self.train_years} is not an interval")
        if first <= self.test_year <= last:
            raise ValueError(f"test_year {self.test_year} lies inside train_years {self.train_years}")
        return self


class LabeledSentence(BaseModel):
    model_config = ConfigDict(frozen=True)

    tokens: Tuple[str, ...]
    tags: Tuple[str, ...]
    date: date
    entity_id: str
    polarity: Polarity
    post_id: str = ""
    category: Optional[str] = None

    @model_validator(mode="after")
    def _check_tags(self) -> "LabeledSentence":
        if len(self.tokens) != len(self.tags):
            raise ValueError(f"{len(self.tokens)} tokens vs {len(self.tags)} tags")
        validate_bilou(self.tags)
        if self.polarity is Polarity.NEGATIVE and any(t != OUTSIDE for t in self.tags):
            raise ValueError("negative sentences must be tagged O throughout")
        return self

    @property
    def sort_key(self) -> Tuple[str, date, str]:
        return (self.entity_id, self.date, self.post_id)


class Dataset(BaseModel):
    train: List[LabeledSentence] = []
    dev: List[LabeledSentence] = []
    test: List[LabeledSentence] = []


# -------------------------------------------------------------------------
# Embeddings
# -------------------------------------------------------------------------

class EmbeddingConfig(BaseModel):
    dim: int = Field(300, gt=0)
    window: int = Field(5, gt=0)
    negatives: int = Field(5, gt=0)
    min_count: int = Field(5, ge=1)
    ngram_min: int = Field(3, ge=1)
    ngram_max: int = Field(6, ge=1)
    buckets: int = 2 ** 21
    epochs_base: int = Field(5, ge=1)
    epochs_refine: int = Field(1, ge=0)
    lr_base: float = Field(0.05, gt=0.0)
    lr_min: float = Field(1e-4, gt=0.0)
    lr_refine: float = Field(0.01, gt=0.0)
    seed: int = DEFAULT_SEED

    @model_validator(mode="after")
    def _check(self) -> "EmbeddingConfig":
        if self.ngram_min > self.ngram_max:
            raise ValueError("ngram_min must not exceed ngram_max")
        if self.buckets < 1 or self.buckets & (self.buckets - 1):
            raise ValueError(f"buckets must be a power of two (got {self.buckets})")
        return self


# -------------------------------------------------------------------------
# Tagger
# -------------------------------------------------------------------------

class TaggerConfig(BaseModel):
    word_hidden: int = Field(256, gt=0)
    char_emb: int = Field(30, gt=0)
    char_hidden: int = Field(64, gt=0)
    dropout: float = Field(0.5, ge=0.0, lt=1.0)
    dropout_on: str = Field("recurrent", pattern="^(recurrent|embeddings|both)$")
    lr: float = Field(0.01, gt=0.0)
    lr_patience: int = Field(3, ge=1)
    lr_floor: float = Field(1e-4, gt=0.0)
    clip: float = Field(5.0, gt=0.0)
    batch: int = Field(32, gt=0)
    max_epochs: int = Field(50, gt=0)
    use_refined: bool = True
    seed: int = DEFAULT_SEED


class DetectedSpan(BaseModel):
    start: int = Field(ge=0)
    end: int
    surface: str
    coarse_type: str
    date: date
    score: float
    post_id: str = ""

    @model_validator(mode="after")
    def _check_bounds(self) -> "DetectedSpan":
        if self.end <= self.start:
            raise ValueError("span end must exceed start")
        return self


# -------------------------------------------------------------------------
# Evaluation
# -------------------------------------------------------------------------

class Scores(BaseModel):
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0


class EvalReport(BaseModel):
    micro: Scores
    per_type: Dict[str, Scores] = {}


class DetectionEvent(BaseModel):
    entity_id: str
    first_detection: date
    kb_update: date


class ImmediacyRow(BaseModel):
    label: str
    targets: int
    found: int
    ratio: float
    mean_lead: Optional[float] = None
    median_lead: Optional[float] = None


class ImmediacyReport(BaseModel):
    rows: List[ImmediacyRow]


# -------------------------------------------------------------------------
# Synthetic worlds
# -------------------------------------------------------------------------

class WorldEntity(BaseModel):
    name: str
    coarse_type: CoarseType
    birth: date
    death: Optional[date] = None
    base_rate: float = 1.0
    burst_multiplier: float = 20.0
    cue_probability: float = 1.0
    kb_lag_days: int = 30
    emergence_burst_multiplier: float = 0.0
    category: Optional[str] = None


class WorldSpec(BaseModel):
    entities: List[WorldEntity]
    start: date
    end: date
    cue_templates: Dict[str, List[str]] = {}
    neutral_templates: List[str] = []
    background_templates: List[str] = []
    background_vocabulary: List[str] = []
    background_posts_per_day: float = 60.0
    burst_radius: int = Field(3, ge=0)
    cue_mode: str = Field("inline", pattern="^(inline|siblings)$")
    retweet_probability: float = 0.2
    seed: int = DEFAULT_SEED


# -------------------------------------------------------------------------
# Pipeline
# -------------------------------------------------------------------------

class PipelinePaths(BaseModel):
    corpus: Optional[Path] = None
    entities: Optional[Path] = None
    mapping: Optional[Path] = None
    update_dates: Optional[Path] = None
    base_corpus: Optional[Path] = None
    output_dir: Path = DEFAULT_OUTPUT_DIR


class PipelineConfig(BaseModel):
    paths: PipelinePaths = PipelinePaths()
    corpus: CorpusOptions = CorpusOptions()
    supervision: SupervisionConfig = SupervisionConfig()
    embeddings: EmbeddingConfig = EmbeddingConfig()
    tagger: TaggerConfig = TaggerConfig()
    type_caps: Dict[str, int] = {"PERSON": 1000, "CREATIVE_WORK": 1000}
    seed: int = DEFAULT_SEED

    @classmethod
    def desk_scale(cls, **overrides) -> "PipelineConfig":
        """Small widths that keep the synthetic end-to-end run laptop sized."""
        config = cls(
            embeddings=EmbeddingConfig(
                dim=48, window=3, negatives=5, min_count=3, buckets=2 ** 12,
                epochs_base=3, epochs_refine=1,
            ),
            tagger=TaggerConfig(
                word_hidden=32, char_emb=16, char_hidden=16, max_epochs=15,
                batch=16, lr=0.05,
            ),
        )
        return config.model_copy(update=overrides)
