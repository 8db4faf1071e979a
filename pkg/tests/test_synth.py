from datetime import date, timedelta

import pytest

from disappearing_entity_tool.bilou import extract_spans
from disappearing_entity_tool.corpus_helper import build_index, daily_counts, peak_day
from disappearing_entity_tool.embedding_helper import RefinedProvider, train_base
from disappearing_entity_tool.errors import ArgumentError, WorldSpecError
from disappearing_entity_tool.models import (
    CoarseType,
    DetectedSpan,
    LabeledSentence,
    PipelineConfig,
    Polarity,
    SupervisionConfig,
    WorldEntity,
    WorldSpec,
)
from disappearing_entity_tool.supervision_helper import collect_baseline_contexts, collect_dataset, split_dataset
from disappearing_entity_tool.synth_helper import (
    DEFAULT_CUE_TEMPLATES,
    DEFAULT_NEUTRAL_TEMPLATES,
    SIBLING_SUBJECT,
    generate,
    load_world,
    reference_pipeline_config,
    reference_world,
    score_against_gold,
    supervision_precision,
    validate_spec,
    write_world,
)
from disappearing_entity_tool.tagger_helper import train

NAMES = [
    ("Kalo Ven", CoarseType.PERSON),
    ("Pristin", CoarseType.GROUP),
    ("Zima Tower", CoarseType.LOCATION),
    ("Belfin Cup", CoarseType.EVENT),
]


def _spec(seed=0, cue_mode="inline", cue_probability=1.0, burst_multiplier=20.0, base_rate=0.5,
          emergence=0.0, entities=NAMES, retweets=0.2):
    return WorldSpec(
        entities=[
            WorldEntity(
                name=name, coarse_type=kind,
                birth=date(2017, 2, 1) + timedelta(days=20 * i),
                death=date(2018, 3, 1) + timedelta(days=45 * i),
                base_rate=base_rate, burst_multiplier=burst_multiplier,
                cue_probability=cue_probability, kb_lag_days=30,
                emergence_burst_multiplier=emergence,
            )
            for i, (name, kind) in enumerate(entities)
        ],
        start=date(2017, 1, 1),
        end=date(2018, 12, 31),
        cue_templates=DEFAULT_CUE_TEMPLATES,
        neutral_templates=DEFAULT_NEUTRAL_TEMPLATES,
        background_posts_per_day=0.0,
        cue_mode=cue_mode,
        retweet_probability=retweets,
        seed=seed,
    )


def _cue_texts(kind, subject):
    return {t.replace("{e}", subject) for t in DEFAULT_CUE_TEMPLATES[kind]}


def _strip_rt(text):
    return text.split(": ", 1)[1] if text.startswith("RT @") else text


def test_invalid_spec_lists_violations():
    spec = _spec().model_copy(update={"neutral_templates": [], "start": date(2019, 1, 1)})
    with pytest.raises(WorldSpecError) as info:
        generate(spec)
    assert "neutral_templates" in str(info.value)
    assert "after end" in str(info.value)


def test_spec_rejects_death_before_birth():
    entity = WorldEntity(name="Vine", coarse_type=CoarseType.SERVICE_PRODUCT,
                         birth=date(2018, 1, 1), death=date(2017, 1, 1))
    spec = _spec().model_copy(update={"entities": [entity]})
    assert any("not before death" in v for v in validate_spec(spec))


def test_generation_is_deterministic(tmp_path):
    first, second = generate(_spec(seed=5)), generate(_spec(seed=5))
    assert first == second
    a = write_world(first, tmp_path / "a")
    b = write_world(second, tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    assert generate(_spec(seed=6)).posts != first.posts


def test_inline_cues_fill_the_burst_window():
    world = generate(_spec(seed=1))
    posts = {p.id: p for p in world.posts}
    for entity in world.entities:
        burst_posts = [s for s in world.gold if s.entity_id == entity.name and entity.in_burst(s.date)]
        assert burst_posts
        cues = _cue_texts(entity.coarse_type.value, entity.name)
        for sentence in burst_posts:
            assert sentence.polarity is Polarity.POSITIVE
            assert sentence.post_id in entity.cue_post_ids
            assert _strip_rt(posts[sentence.post_id].text) in cues
        assert entity.first_cue_day == min(s.date for s in burst_posts)
        assert entity.kb_update == entity.death + timedelta(days=30)


def test_gold_labels_mark_the_entity():
    world = generate(_spec(seed=2))
    for sentence in world.gold:
        spans = extract_spans(sentence.tags)
        if sentence.polarity is Polarity.NEGATIVE:
            assert spans == []
            continue
        entity = world.entity(sentence.entity_id)
        assert spans
        for start, end, kind in spans:
            assert kind == entity.coarse_type.value
            assert " ".join(sentence.tokens[start:end]) == entity.name


def test_sibling_mode_separates_cue_from_name():
    world = generate(_spec(seed=3, cue_mode="siblings"))
    posts = {p.id: p for p in world.posts}
    for entity in world.entities:
        assert entity.cue_post_ids
        siblings = _cue_texts(entity.coarse_type.value, SIBLING_SUBJECT)
        for post_id in entity.cue_post_ids:
            assert _strip_rt(posts[post_id].text) in siblings
        positives = [s for s in world.gold if s.entity_id == entity.name and s.polarity is Polarity.POSITIVE]
        assert len(positives) == len(entity.cue_post_ids)
        assert all(_strip_rt(posts[s.post_id].text) in {
            t.replace("{e}", entity.name) for t in DEFAULT_NEUTRAL_TEMPLATES
        } for s in positives)


def test_world_files_round_trip(tmp_path):
    world = generate(_spec(seed=4))
    write_world(world, tmp_path)
    loaded = load_world(tmp_path)
    assert loaded.posts == world.posts
    assert loaded.gold == world.gold
    assert loaded.entities == world.entities
    assert loaded.spec == world.spec


def test_burst_wins_peak_day():
    hits = 0
    entities = [("Kalo Ven", CoarseType.PERSON)]
    for seed in range(100):
        spec = _spec(seed=seed, base_rate=1.0, burst_multiplier=20.0, entities=entities)
        entity = spec.entities[0].model_copy(update={"birth": date(2018, 1, 1)})
        spec = spec.model_copy(update={"start": date(2018, 1, 1), "entities": [entity]})
        world = generate(spec)
        entity = world.entities[0]
        index = build_index(world.posts)
        peak = peak_day(daily_counts(index, entity.name), entity.death.year)
        hits += entity.in_burst(peak)
    assert hits >= 99


def test_time_sensitive_supervision_finds_the_burst():
    cfg = SupervisionConfig(k=100, train_years=(2016, 2017), test_year=2018, seed=0)
    on_burst, precision = [], []
    for seed in range(20):
        world = generate(_spec(seed=seed))
        sentences = collect_dataset(world.entity_records(), build_index(world.posts), cfg)
        _, label_precision, day_accuracy = supervision_precision(world, sentences)
        on_burst.append(day_accuracy)
        precision.append(label_precision)
        negatives = [s for s in sentences if s.polarity is Polarity.NEGATIVE]
        assert all(s.date.year < world.entity(s.entity_id).death.year for s in negatives)
    assert sum(on_burst) / len(on_burst) >= 0.95
    assert sum(precision) / len(precision) >= 0.95


def test_baseline_is_misled_by_emergence_bursts():
    cfg = SupervisionConfig(k=100, train_years=(2016, 2017), test_year=2018, seed=0)
    tds, baseline = [], []
    for seed in range(5):
        world = generate(_spec(seed=seed, burst_multiplier=8.0, emergence=60.0))
        index = build_index(world.posts)
        records = world.entity_records()
        tds.append(supervision_precision(world, collect_dataset(records, index, cfg))[2])
        positives = []
        for record in records:
            found, _ = collect_baseline_contexts(record, index, cutoff=record.disappearance_year, seed=seed)
            positives.extend(found)
        baseline.append(supervision_precision(world, positives)[2] or 0.0)
    assert sum(baseline) / len(baseline) < sum(tds) / len(tds)


def test_oracle_scores_perfect_detections():
    world = generate(_spec(seed=7))
    detections = []
    for sentence in world.gold:
        for start, end, kind in extract_spans(sentence.tags):
            detections.append(DetectedSpan(
                start=start, end=end, surface=" ".join(sentence.tokens[start:end]),
                coarse_type=kind, date=sentence.date, score=0.0, post_id=sentence.post_id,
            ))
    report = score_against_gold(world, detections=detections, year=2018)
    assert report.end_to_end.f1 == 1.0
    assert report.found == report.targets == len(NAMES)
    kb_leads = [(e.kb_update - e.first_cue_day).days for e in world.entities]
    assert report.lead_vs_kb.mean == pytest.approx(sum(kb_leads) / len(kb_leads))
    death_leads = [(e.death - e.first_cue_day).days for e in world.entities]
    assert report.lead_vs_death.mean == pytest.approx(sum(death_leads) / len(death_leads))
    assert all(lead == 30 + death for lead, death in zip(kb_leads, death_leads))


def test_oracle_rejects_unknown_entities():
    world = generate(_spec(seed=8))
    stray = LabeledSentence(tokens=("Nobody", "left"), tags=("U-PERSON", "O"), date=date(2018, 1, 1),
                            entity_id="Nobody", polarity=Polarity.POSITIVE, post_id="x")
    with pytest.raises(ArgumentError):
        score_against_gold(world, supervision=[stray])


def test_reference_world_shape(tmp_path):
    spec = reference_world(seed=0)
    assert len(spec.entities) == 50
    assert validate_spec(spec) == []
    deaths = [e.death for e in spec.entities if e.death is not None]
    assert sum(d.year == 2018 for d in deaths) == 24
    assert sum(d.year == 2019 for d in deaths) == 20
    assert reference_world(seed=0) == spec
    config = reference_pipeline_config(tmp_path / "world", tmp_path / "out", seed=0)
    assert config.supervision.train_years == (2017, 2018)
    assert config.paths.corpus == tmp_path / "world" / "posts.jsonl"


@pytest.mark.slow
def test_refined_stack_helps_when_cues_sit_in_sibling_posts():
    gains = []
    for seed in range(5):
        spec = reference_world(seed=seed, cue_mode="siblings", n_train=12, n_test=4, n_persistent=2)
        world = generate(spec.model_copy(update={"background_posts_per_day": 5.0}))
        index = build_index(world.posts)
        supervision = SupervisionConfig(k=30, train_years=(2017, 2018), test_year=2019, seed=seed)
        dataset = split_dataset(collect_dataset(world.entity_records(), index, supervision), supervision)
        config = PipelineConfig.desk_scale(seed=seed)
        tagger_cfg = config.tagger.model_copy(update={"seed": seed, "max_epochs": 8})
        base = train_base([p for p in world.posts if p.day.year < 2019], config.embeddings)
        provider = RefinedProvider(base=base, index=index)
        _, with_refined = train(dataset, base, provider, tagger_cfg, use_refined=True)
        _, without_refined = train(dataset, base, provider, tagger_cfg, use_refined=False)
        gains.append(with_refined.best_dev_f1 - without_refined.best_dev_f1)
    assert sum(gains) / len(gains) >= 0.0
