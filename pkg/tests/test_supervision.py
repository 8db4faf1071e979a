from datetime import date, timedelta

import numpy as np
import pytest

from disappearing_entity_tool.bilou import extract_spans
from disappearing_entity_tool.corpus_helper import build_index
from disappearing_entity_tool.errors import InputFormatError
from disappearing_entity_tool.models import (
    CoarseType,
    Dataset,
    EntityRecord,
    LabeledSentence,
    Polarity,
    SupervisionConfig,
)
from disappearing_entity_tool.supervision_helper import (
    collect_baseline_contexts,
    collect_dataset,
    collect_negative_contexts,
    collect_positive_contexts,
    dataset_statistics,
    label_mentions,
    read_conll,
    split_dataset,
    write_conll,
)
from disappearing_entity_tool.tagger_helper import train

CFG = SupervisionConfig(k=100, train_years=(2015, 2018), test_year=2019, seed=3)


def _entity(name="Pristin", year=2019, kind=CoarseType.GROUP, aliases=None):
    return EntityRecord(
        canonical_name=name, aliases=tuple(aliases or (name,)), disappearance_year=year,
        categories=("Musical_groups",), coarse_type=kind,
    )


def test_label_single_token():
    tags = label_mentions(["Google+", "is", "shutting", "down"], ["Google+"], "SERVICE_PRODUCT")
    assert tags == ["U-SERVICE_PRODUCT", "O", "O", "O"]


def test_label_multi_token():
    tags = label_mentions(["Red", "Bull", "Air", "Race", "ends"], ["Red Bull Air Race"], CoarseType.EVENT)
    assert tags == ["B-EVENT", "I-EVENT", "I-EVENT", "L-EVENT", "O"]


def test_label_no_alias():
    assert label_mentions(["nothing", "here"], ["Vine"], "SERVICE_PRODUCT") == ["O", "O"]


def test_label_prefers_longest_alias_and_all_mentions():
    tokens = ["red", "bull", "and", "Red", "Bull", "Air", "Race"]
    tags = label_mentions(tokens, ["Red Bull", "Red Bull Air Race"], "EVENT")
    assert tags == ["B-EVENT", "L-EVENT", "O", "B-EVENT", "I-EVENT", "I-EVENT", "L-EVENT"]
    first = label_mentions(tokens, ["Red Bull"], "EVENT", first_only=True)
    assert first == ["B-EVENT", "L-EVENT", "O", "O", "O", "O", "O"]


def _corpus(make_post, peak_posts=37, negatives=200):
    posts = []
    peak = date(2019, 5, 10)
    posts += [make_post(f"peak{i:03d}", peak, "Pristin to disband after 2 years", minute=i) for i in range(peak_posts)]
    posts += [make_post(f"quiet{i}", date(2019, 2, 1 + i), "Pristin new single") for i in range(3)]
    start = date(2017, 1, 1)
    posts += [
        make_post(f"old{i:03d}", start + timedelta(days=i % 300), "Pristin live tonight", minute=i % 1000)
        for i in range(negatives)
    ]
    return build_index(posts), peak


def test_positive_contexts_on_peak_day(make_post):
    index, peak = _corpus(make_post)
    positives = collect_positive_contexts(_entity(), index, CFG)
    assert len(positives) == 37
    assert {s.date for s in positives} == {peak}
    assert all(s.polarity is Polarity.POSITIVE and s.tags[0] == "U-GROUP" for s in positives)


def test_positive_contexts_uncovered_entity(make_post):
    index, _ = _corpus(make_post)
    assert collect_positive_contexts(_entity("Loona", 2019), index, CFG) == []


def test_negative_contexts_balanced_and_before_year(make_post):
    index, _ = _corpus(make_post, peak_posts=40, negatives=200)
    negatives = collect_negative_contexts(_entity(), index, CFG)
    assert len(negatives) == 40
    assert all(s.date < date(2019, 1, 1) for s in negatives)
    assert all(set(s.tags) == {"O"} and s.polarity is Polarity.NEGATIVE for s in negatives)


def test_negative_contexts_without_history(make_post):
    index, _ = _corpus(make_post, negatives=0)
    assert collect_negative_contexts(_entity(), index, CFG) == []


def test_collect_dataset_is_deterministic_and_ordered(make_post):
    index, _ = _corpus(make_post)
    first = collect_dataset([_entity()], index, CFG)
    assert first == collect_dataset([_entity()], index, CFG)
    assert first == sorted(first, key=lambda s: s.sort_key)


def test_baseline_prefers_retweets_on_last_burst(make_post):
    burst = date(2018, 8, 1)
    posts = [make_post(f"rt{i:03d}", burst, f"RT Pristin forever {i}", minute=i % 1400, rt=True) for i in range(250)]
    posts += [make_post(f"own{i}", burst, "Pristin forever", minute=i) for i in range(20)]
    posts += [make_post(f"early{i:03d}", date(2016, 3, 1), "Pristin debut", minute=i) for i in range(150)]
    index = build_index(posts)
    positives, negatives = collect_baseline_contexts(_entity(year=2019), index, cutoff=2018, seed=1)
    assert len(positives) == 100
    assert all(s.post_id.startswith("rt") for s in positives)
    assert len(negatives) == 100
    assert all(s.date == date(2016, 3, 1) for s in negatives)


def test_baseline_without_qualifying_day(make_post):
    posts = [make_post(f"p{i}", date(2018, 1, 1 + i), "Pristin again") for i in range(20)]
    assert collect_baseline_contexts(_entity(), build_index(posts), cutoff=2018) == ([], [])


def _sentence(i, year, entity="E", polarity=Polarity.NEGATIVE):
    return LabeledSentence(
        tokens=("hello", "world"), tags=("O", "O"), date=date(year, 1, 1) + timedelta(days=i % 200),
        entity_id=f"{entity}{i % 4}", polarity=polarity, post_id=f"p{year}-{i:04d}",
    )


def test_split_dataset_sizes_and_years():
    sentences = [_sentence(i, 2016) for i in range(100)] + [_sentence(i, 2019) for i in range(7)]
    sentences.append(_sentence(0, 2010))
    cfg = SupervisionConfig(train_years=(2015, 2018), test_year=2019, dev_fraction=0.10, seed=8)
    dataset = split_dataset(sentences, cfg)
    assert len(dataset.dev) == 10
    assert len(dataset.train) == 90
    assert len(dataset.test) == 7
    assert all(s.date.year == 2019 for s in dataset.test)
    assert split_dataset(sentences, cfg) == dataset


def test_conll_round_trip(tmp_path):
    sentences = [
        LabeledSentence(tokens=("Red", "Bull", "Air", "Race", "ends"),
                        tags=("B-EVENT", "I-EVENT", "I-EVENT", "L-EVENT", "O"),
                        date=date(2019, 3, 1), entity_id="Red Bull Air Race",
                        polarity=Polarity.POSITIVE, post_id="a1", category="Sporting_events"),
        LabeledSentence(tokens=("Red", "Bull", "Air", "Race"), tags=("O", "O", "O", "O"),
                        date=date(2017, 3, 1), entity_id="Red Bull Air Race",
                        polarity=Polarity.NEGATIVE, post_id="a2"),
    ]
    path = tmp_path / "out.conll"
    write_conll(sentences, path)
    assert read_conll(path) == sentences


def test_read_conll_rejects_illegal_tags(write_lines):
    path = write_lines("bad.conll", [
        "# id=x date=2019-01-01 entity=Vine polarity=POS",
        "Vine\tI-PERSON",
        "",
    ])
    with pytest.raises(InputFormatError) as info:
        read_conll(path)
    assert ":2:" in str(info.value)


def test_read_conll_rejects_unclosed_span(write_lines):
    path = write_lines("bad.conll", [
        "# id=x date=2019-01-01 entity=Vine polarity=POS",
        "Vine\tB-PERSON",
        "",
    ])
    with pytest.raises(InputFormatError):
        read_conll(path)


def test_read_conll_empty_file(write_lines):
    assert read_conll(write_lines("empty.conll", [])) == []


def test_dataset_statistics():
    positive = LabeledSentence(tokens=("Vine", "ends"), tags=("U-SERVICE_PRODUCT", "O"), date=date(2019, 1, 1),
                               entity_id="Vine", polarity=Polarity.POSITIVE, post_id="a",
                               category="Internet_properties")
    negative = LabeledSentence(tokens=("Vine", "fun"), tags=("O", "O"), date=date(2016, 1, 1),
                               entity_id="Vine", polarity=Polarity.NEGATIVE, post_id="b",
                               category="Internet_properties")
    table = dataset_statistics([positive, negative])
    row = table["SERVICE_PRODUCT"]
    assert (row.entities, row.posts, row.positives, row.negatives) == (1, 2, 1, 1)
    assert row.categories["Internet_properties"].posts == 2
    assert table["TOTAL"].posts == 2


def test_unmapped_entities_are_left_out_of_training_data(make_post, random_embedding, tiny_embedding_config, tiny_tagger_config):
    peak = date(2019, 5, 10)
    posts = [make_post(f"p{i}", peak, "Pristin to disband", minute=i) for i in range(5)]
    posts += [make_post(f"f{i}", peak, "Foo is gone", minute=i) for i in range(12)]
    posts += [make_post(f"po{i}", date(2017, 3, 1 + i), "Pristin live tonight") for i in range(5)]
    posts += [make_post(f"fo{i}", date(2017, 3, 1 + i), "Foo is here") for i in range(5)]
    index = build_index(posts)
    unmapped = _entity("Foo", kind=CoarseType.UNMAPPED)

    sentences = collect_dataset([_entity(), unmapped], index, CFG)
    assert {s.entity_id for s in sentences} == {"Pristin"}
    assert not any(tag.endswith("UNMAPPED") for s in sentences for tag in s.tags)
    assert collect_baseline_contexts(unmapped, index, cutoff=2019) == ([], [])

    words = sorted({t for s in sentences for t in s.tokens})
    base = random_embedding(words, tiny_embedding_config)
    _, log = train(Dataset(train=sentences, dev=sentences), base, None, tiny_tagger_config)
    assert len(log.epochs) >= 1


PLACED_ALIASES = ["Red Bull", "Red Bull Air Race", "Vine", "Bull"]
FILLER = ["we", "saw", "it", "today", "so", "sad", "air", "race", "news"]


def _placed_sentence(rng):
    """Tokens with aliases dropped in at random, plus the spans they should get."""
    tokens, spans = [], []
    for _ in range(int(rng.integers(1, 6))):
        for _ in range(int(rng.integers(0, 3))):
            tokens.append(FILLER[int(rng.integers(len(FILLER)))])
        alias = PLACED_ALIASES[int(rng.integers(len(PLACED_ALIASES)))].split()
        # Filler is lower-cased, so it never extends a placed "Red Bull".
        spans.append((len(tokens), len(tokens) + len(alias), "EVENT"))
        tokens.extend(alias)
    return tokens, spans


def test_label_mentions_matches_placed_aliases():
    rng = np.random.default_rng(17)
    for _ in range(300):
        tokens, spans = _placed_sentence(rng)
        tags = label_mentions(tokens, PLACED_ALIASES, "EVENT", fold_case=False)
        assert extract_spans(tags) == spans, tokens
