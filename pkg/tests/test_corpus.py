from datetime import date

import pytest
from scipy.stats import chisquare

from disappearing_entity_tool.corpus_helper import (
    build_index,
    daily_counts,
    derive_seed,
    first_appearance_year,
    ingest_posts,
    iter_posts,
    peak_day,
    sample_posts,
    tokenize,
    DailySeries,
    IngestReport,
)
from disappearing_entity_tool.errors import ArgumentError, InputFormatError
from disappearing_entity_tool.models import CorpusOptions


def test_tokenize_drops_urls_mentions_and_keeps_plus():
    text = "RT @u: Google+ is shutting down https://t.co/x"
    assert tokenize(text) == ["RT", "Google+", "is", "shutting", "down"]


def test_tokenize_plain_sentence():
    assert tokenize("Pristin to disband after 2 years") == ["Pristin", "to", "disband", "after", "2", "years"]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_strips_outer_punctuation_and_hashtags():
    assert tokenize('"Vine," they said! #sad') == ["Vine", "they", "said"]


def test_tokenize_drops_sentence_final_period():
    assert tokenize("Goodbye Vine.") == ["Goodbye", "Vine"]
    assert tokenize("they said...") == ["they", "said"]


def test_tokenize_keeps_abbreviation_periods():
    assert tokenize("the U.S. team, e.g. Pristin.") == ["the", "U.S.", "team", "e.g.", "Pristin"]


def test_sentence_final_mentions_are_counted(make_post):
    index = build_index([make_post("a", date(2019, 1, 5), "Goodbye Vine.")])
    assert daily_counts(index, "Vine").as_dict() == {date(2019, 1, 5): 1}


def test_fold_case_defaults_follow_language(make_post):
    assert CorpusOptions(language="en").fold_case is True
    assert CorpusOptions(language="ja").fold_case is False
    assert CorpusOptions(language="ja", fold_case=True).fold_case is True
    post = make_post("a", date(2019, 1, 5), "ヴァイン 終了 Vine").model_copy(update={"lang": "ja"})
    index = build_index([post], CorpusOptions(language="ja"))
    assert index.key(post.tokens) == ("ヴァイン", "終了", "Vine")
    assert daily_counts(index, "ヴァイン 終了").as_dict() == {date(2019, 1, 5): 1}
    assert daily_counts(index, "vine").as_dict() == {}
    assert daily_counts(build_index([post]), "vine").as_dict() == {date(2019, 1, 5): 1}


def test_ingest_counts_undecodable_lines(tmp_path, record):
    path = tmp_path / "posts.jsonl"
    good = record("a", "2019-01-01T10:00:00Z", "Vine is closing").encode("utf-8")
    bad = b'{"id": "b", "ts": "2019-01-01T11:00:00Z", "text": "caf\xe9"}'
    path.write_bytes(good + b"\n" + bad + b"\n")
    index, report = ingest_posts(path)
    assert [p.id for p in index.iter_posts()] == ["a"]
    assert report == IngestReport(accepted=1, malformed=1, duplicates=0)


def test_ingest_counts_malformed_lines(record):
    lines = [
        record("a", "2019-01-01T10:00:00Z", "Vine is closing"),
        record("b", "2019-01-01T11:00:00Z", "Vine again"),
        "{not json",
        record("c", "2019-01-02T09:00:00+02:00", "bye Vine"),
    ]
    index, report = ingest_posts(lines)
    assert index.total_posts == 3
    assert report == IngestReport(accepted=3, malformed=1, duplicates=0)


def test_ingest_skips_duplicates_and_naive_timestamps(record):
    lines = [
        record("a", "2019-01-01T10:00:00Z", "one"),
        record("a", "2019-01-01T10:00:00Z", "one"),
        record("b", "2019-01-01T10:00:00", "no zone"),
    ]
    index, report = ingest_posts(lines)
    assert index.total_posts == 1
    assert report.duplicates == 1
    assert report.malformed == 1


def test_ingest_empty_stream():
    index, report = ingest_posts([])
    assert index.total_posts == 0
    assert report == IngestReport()


def test_ingest_unreadable_path(tmp_path):
    with pytest.raises(InputFormatError):
        ingest_posts(tmp_path / "missing.jsonl")


def test_timestamps_are_normalized_to_utc(record):
    lines = [record("a", "2019-01-02T01:00:00+03:00", "late night Vine")]
    index, _ = ingest_posts(lines)
    assert index.days() == [date(2019, 1, 1)]


def test_daily_counts_vine(record):
    lines = [record(f"p{i}", f"2019-01-01T0{i}:00:00Z", "Vine Vine is done") for i in range(3)]
    index, _ = ingest_posts(lines)
    assert daily_counts(index, ["Vine"]).entries == ((date(2019, 1, 1), 3),)


def test_daily_counts_per_day_and_range(make_post):
    a, b = date(2019, 1, 1), date(2019, 1, 2)
    posts = [make_post(f"a{i}", a, "the Tower falls") for i in range(2)]
    posts += [make_post(f"b{i}", b, "the Tower falls") for i in range(5)]
    index = build_index(posts)
    assert list(daily_counts(index, "the Tower")) == [(a, 2), (b, 5)]
    assert list(daily_counts(index, "Tower", (b, None))) == [(b, 5)]
    assert list(daily_counts(index, "Tower", (date(2020, 1, 1), None))) == []


def test_daily_counts_case_folding(make_post):
    d = date(2019, 1, 1)
    posts = [make_post("a", d, "VINE closes"), make_post("b", d, "vine closes")]
    assert daily_counts(build_index(posts), "Vine").entries == ((d, 2),)
    strict = build_index(posts, CorpusOptions(fold_case=False))
    assert daily_counts(strict, "Vine").entries == ()


def test_daily_counts_longer_than_indexed_ngrams(make_post):
    d = date(2019, 1, 1)
    posts = [make_post("a", d, "a b c d e f g h"), make_post("b", d, "a b c")]
    index = build_index(posts, CorpusOptions(max_ngram=2))
    assert daily_counts(index, "b c d e").entries == ((d, 1),)


def test_exclude_retweets_from_counts(make_post):
    d = date(2019, 1, 1)
    posts = [make_post("a", d, "RT Vine closes", rt=True), make_post("b", d, "Vine closes")]
    assert daily_counts(build_index(posts), "Vine").entries == ((d, 2),)
    index = build_index(posts, CorpusOptions(exclude_rt=True))
    assert daily_counts(index, "Vine").entries == ((d, 1),)
    assert index.total_posts == 2


def test_daily_counts_rejects_empty_phrase(make_post):
    index = build_index([make_post("a", date(2019, 1, 1), "x")])
    with pytest.raises(ArgumentError):
        daily_counts(index, [])
    with pytest.raises(ArgumentError):
        first_appearance_year(index, "")


def test_peak_day_earliest_tie():
    series = DailySeries(((date(2019, 3, 1), 2), (date(2019, 3, 2), 7), (date(2019, 3, 3), 7)))
    assert peak_day(series, 2019) == date(2019, 3, 2)


def test_peak_day_other_year():
    series = DailySeries(((date(2018, 3, 1), 2), (date(2018, 5, 2), 9)))
    assert peak_day(series, 2019) is None


def test_first_appearance_year(make_post):
    posts = [
        make_post("a", date(2015, 6, 1), "Vine launches"),
        make_post("b", date(2016, 1, 1), "Vine again"),
        make_post("c", date(2019, 12, 31), "Periscope tonight"),
    ]
    index = build_index(posts)
    assert first_appearance_year(index, "Vine") == 2015
    assert first_appearance_year(index, "Periscope") == 2019
    assert first_appearance_year(index, "Myspace") is None


def test_parallel_build_matches_single_threaded(make_post):
    posts = [
        make_post(f"p{i}", date(2019, 1, 1 + i % 9), f"word{i % 4} shared token {i % 3}", minute=i)
        for i in range(60)
    ]
    single = build_index(posts, workers=1)
    sharded = build_index(posts, workers=3)
    assert sharded.days() == single.days()
    assert sharded.posts_by_day == single.posts_by_day
    assert dict(sharded.phrase_counts) == dict(single.phrase_counts)


def test_posts_on_day_sorted_by_time_then_id(make_post):
    d = date(2019, 1, 1)
    posts = [make_post("z", d, "x", minute=5), make_post("b", d, "x", minute=1), make_post("a", d, "x", minute=5)]
    index = build_index(posts)
    assert [p.id for p in index.posts_on_day(d)] == ["b", "a", "z"]


def test_iter_posts_from_file(write_lines, record):
    path = write_lines("posts.jsonl", [record("a", "2019-01-01T00:00:00Z", "hello"), "", "[]"])
    report = IngestReport()
    posts = list(iter_posts(path, report))
    assert [p.id for p in posts] == ["a"]
    assert report.malformed == 1


def _sampling_index(make_post, n):
    d = date(2019, 5, 5)
    return build_index([make_post(f"p{i:02d}", d, f"Vine post {i}", minute=i) for i in range(n)]), d


def test_sample_posts_undersupply(make_post):
    index, d = _sampling_index(make_post, 5)
    assert len(sample_posts(index, "Vine", {d}, 100, seed=1)) == 5


def test_sample_posts_deterministic(make_post):
    index, d = _sampling_index(make_post, 10)
    first = sample_posts(index, "Vine", {d}, 2, seed=11)
    assert first == sample_posts(index, "Vine", {d}, 2, seed=11)
    assert len({p.id for p in first}) == 2


def test_sample_posts_rejects_bad_k(make_post):
    index, d = _sampling_index(make_post, 3)
    with pytest.raises(ArgumentError):
        sample_posts(index, "Vine", {d}, 0, seed=1)


def test_sample_posts_uniform(make_post):
    index, d = _sampling_index(make_post, 10)
    counts = {f"p{i:02d}": 0 for i in range(10)}
    for seed in range(10_000):
        for post in sample_posts(index, "Vine", {d}, 2, seed=derive_seed(3, seed)):
            counts[post.id] += 1
    assert sum(counts.values()) == 20_000
    assert chisquare(list(counts.values())).pvalue > 0.01


def test_derive_seed_is_stable():
    assert derive_seed(42, "dev", "Vine") == derive_seed(42, "dev", "Vine")
    assert derive_seed(42, "dev", "Vine") != derive_seed(43, "dev", "Vine")
