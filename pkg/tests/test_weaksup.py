"""Weak-supervision corpus: similarity filter, query replacement, split."""

from __future__ import annotations

import math

import numpy as np
import pytest

from spanground.core import ENTITY_TYPES
from spanground.querybank import QueryBank
from spanground.weaksup import (
    DEFAULT_RATIO,
    DEFAULT_TAU,
    PhraseSample,
    SPLIT_NAMES,
    build_corpus,
    filter_by_similarity,
    hashed_embedder,
    merge_and_split,
    read_phrase_corpus,
    replace_queries,
    split_sizes,
    write_phrase_corpus,
)

BANK = QueryBank()


def _sample(uid, phrase, origin="external_unmodified", **kw):
    defaults = dict(
        image_ref=f"img_{uid}.jpg", x1=10.0, y1=20.0, x2=110.0, y2=90.0, width=640, height=480
    )
    defaults.update(kw)
    return PhraseSample(uid=uid, phrase=phrase, origin=origin, **defaults)


def _planted_embedder(similarities):
    """Queries map to one-hot axes; phrases to unit vectors with a chosen
    cosine against one query axis and the rest of the mass on a spare axis."""
    table = {}
    for i, etype in enumerate(ENTITY_TYPES):
        vec = np.zeros(6)
        vec[i] = 1.0
        table[BANK.query_text(etype)] = vec
    for phrase, (etype, cos) in similarities.items():
        vec = np.zeros(6)
        vec[ENTITY_TYPES.index(etype)] = cos
        vec[4] = math.sqrt(1.0 - cos * cos)
        table[phrase] = vec

    def embed(text):
        return table.get(text, np.zeros(6))

    return embed


def test_filter_planted_similarities():
    # Max-cosine scores 0.65, 0.71, 0.90 at tau 0.7: only the last two kept.
    embedder = _planted_embedder(
        {
            "street sign": ("PER", 0.65),
            "city skyline": ("LOC", 0.71),
            "team uniform": ("ORG", 0.90),
        }
    )
    corpus = [
        _sample("a", "street sign"),
        _sample("b", "city skyline"),
        _sample("c", "team uniform"),
    ]
    result = filter_by_similarity(corpus, BANK, embedder, tau=0.7)
    assert [s.uid for s in result.kept] == ["b", "c"]
    assert [s.matched_type for s in result.kept] == ["LOC", "ORG"]
    assert result.kept[0].score == pytest.approx(0.71)
    assert result.kept[1].score == pytest.approx(0.90)
    assert result.skipped_zero_norm == 0
    # Every kept score reaches tau; every dropped sample's best score does not.
    assert all(s.score >= 0.7 for s in result.kept)


def test_filter_self_similarity_and_orthogonal():
    embedder = _planted_embedder({"totally unrelated": ("PER", 0.0)})
    corpus = [
        _sample("self", BANK.query_text("PER")),
        _sample("orth", "totally unrelated"),
    ]
    result = filter_by_similarity(corpus, BANK, embedder, tau=DEFAULT_TAU)
    assert [s.uid for s in result.kept] == ["self"]
    assert result.kept[0].matched_type == "PER"
    assert result.kept[0].score == pytest.approx(1.0)


def test_filter_zero_norm_phrase_skipped():
    embedder = _planted_embedder({})
    corpus = [_sample("z", "phrase with no embedding")]
    result = filter_by_similarity(corpus, BANK, embedder, tau=0.7)
    assert result.kept == ()
    assert result.skipped_zero_norm == 1


def test_filter_zero_norm_query_rejected():
    def embed(text):
        return np.zeros(4)

    with pytest.raises(ValueError, match="zero norm"):
        filter_by_similarity([], BANK, embed, tau=0.7)


def test_filter_tau_range():
    embedder = _planted_embedder({})
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(ValueError, match="tau"):
            filter_by_similarity([], BANK, embedder, tau=bad)


def test_replace_queries_swaps_phrase_only():
    embedder = _planted_embedder({"team uniform": ("ORG", 0.9), "crowd": ("PER", 0.8)})
    corpus = [_sample("u1", "team uniform"), _sample("u2", "crowd", x1=1.0, y1=2.0, x2=3.5, y2=4.5)]
    kept = filter_by_similarity(corpus, BANK, embedder, tau=0.7).kept
    copies = replace_queries(kept, BANK)
    assert len(copies) == len(kept)
    assert copies[0].phrase == (
        "Organization: Include club, company, government party, school government, "
        "and news organization."
    )
    assert copies[1].phrase == BANK.query_text("PER")
    for original, copy in zip(kept, copies):
        assert copy.uid == original.uid + "#q"
        assert copy.origin == "external_query_replaced"
        assert copy.image_ref == original.image_ref
        assert (copy.x1, copy.y1, copy.x2, copy.y2) == (
            original.x1,
            original.y1,
            original.x2,
            original.y2,
        )
        assert (copy.width, copy.height) == (original.width, original.height)


def test_replace_queries_requires_matched_type():
    with pytest.raises(ValueError, match="no matched type"):
        replace_queries([_sample("u", "phrase")], BANK)


def test_split_sizes_round_numbers():
    assert split_sizes(1000) == (900, 50, 50)
    assert sum(split_sizes(1000)) == 1000


def test_split_sizes_published_corpus_size():
    sizes = split_sizes(26311)
    assert sum(sizes) == 26311
    assert sizes[0] == 23680
    assert sorted(sizes[1:]) == [1315, 1316]


def test_split_sizes_within_one_of_exact():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 50_000))
        sizes = split_sizes(n)
        assert sum(sizes) == n
        for size, r in zip(sizes, DEFAULT_RATIO):
            assert abs(size - n * r / 10.0) <= 1.0


def test_split_sizes_errors():
    with pytest.raises(ValueError):
        split_sizes(0)
    with pytest.raises(ValueError):
        split_sizes(10, (9, 0, 1))


def test_merge_and_split_partition_and_determinism():
    groups = [
        [_sample(f"a{i}", "p", matched_type="PER", score=0.9) for i in range(41)],
        [_sample(f"b{i}", "q", origin="external_query_replaced", matched_type="PER") for i in range(41)],
        [_sample(f"c{i}", "r", origin="in_domain") for i in range(18)],
    ]
    splits = merge_and_split(groups, seed=5)
    assert set(splits) == set(SPLIT_NAMES)
    assert (len(splits["train"]), len(splits["val"]), len(splits["test"])) == (90, 5, 5)
    merged_uids = sorted(s.uid for group in groups for s in group)
    split_uids = sorted(s.uid for part in splits.values() for s in part)
    assert split_uids == merged_uids
    # All origin tags shuffled together: train contains more than one tag.
    assert len({s.origin for s in splits["train"]}) > 1

    again = merge_and_split(groups, seed=5)
    for name in SPLIT_NAMES:
        assert [s.uid for s in again[name]] == [s.uid for s in splits[name]]
    different = merge_and_split(groups, seed=6)
    assert any(
        [s.uid for s in different[name]] != [s.uid for s in splits[name]] for name in SPLIT_NAMES
    )


def test_merge_and_split_empty():
    with pytest.raises(ValueError, match="empty"):
        merge_and_split([[], []])


def test_build_corpus_pipeline():
    embedder = _planted_embedder(
        {f"phrase{i}": (ENTITY_TYPES[i % 4], 0.75 + 0.01 * (i % 20)) for i in range(40)}
    )
    external = [_sample(f"e{i:03d}", f"phrase{i}") for i in range(40)]
    in_domain = [_sample(f"d{i:03d}", BANK.query_text("PER"), origin="in_domain") for i in range(20)]
    splits, result = build_corpus(external, in_domain, BANK, embedder, tau=0.7, seed=1)
    assert len(result.kept) == 40
    total = sum(len(v) for v in splits.values())
    assert total == 40 + 40 + 20
    origins = {s.origin for part in splits.values() for s in part}
    assert origins == {"external_unmodified", "external_query_replaced", "in_domain"}


def test_hashed_embedder_deterministic():
    embed = hashed_embedder(dim=32)
    a = embed("team uniform")
    assert a.shape == (32,)
    assert np.array_equal(a, embed("team uniform"))
    assert np.linalg.norm(a) > 0
    assert np.array_equal(embed(""), np.zeros(32))
    # Token order does not matter for mean pooling; different words do.
    assert np.allclose(embed("uniform team"), a)
    assert not np.allclose(embed("red car"), a)


def test_phrase_sample_validation_and_frame_box():
    with pytest.raises(ValueError, match="origin"):
        _sample("u", "p", origin="scraped")
    with pytest.raises(ValueError, match="invalid"):
        _sample("u", "p", x1=200.0, x2=100.0)
    with pytest.raises(ValueError, match="positive"):
        _sample("u", "p", width=0)
    box = _sample("u", "p").frame_box()
    assert box.x1 == pytest.approx(10.0 * 256.0 / 640.0)
    assert box.y2 == pytest.approx(90.0 * 256.0 / 480.0)


def test_phrase_corpus_round_trip(tmp_path):
    samples = [
        _sample("x", "a phrase", matched_type="LOC", score=0.7321),
        _sample("y", "another", origin="in_domain", x1=0.25, y1=0.5, x2=639.75, y2=479.125),
    ]
    path = tmp_path / "corpus.tsv"
    write_phrase_corpus(path, samples)
    loaded = read_phrase_corpus(path)
    assert len(loaded) == 2
    for original, got in zip(samples, loaded):
        assert got.image_ref == original.image_ref
        assert got.phrase == original.phrase
        assert (got.x1, got.y1, got.x2, got.y2) == (original.x1, original.y1, original.x2, original.y2)
        assert (got.width, got.height) == (original.width, original.height)
        assert got.origin == original.origin
        assert got.matched_type == original.matched_type
        assert got.score == original.score
    assert loaded[0].uid == "corpus:000001"


def test_phrase_corpus_eight_column_default_origin(tmp_path):
    path = tmp_path / "raw.tsv"
    path.write_text("img.jpg\tred car\t0\t0\t50\t40\t100\t80\n", encoding="utf-8")
    loaded = read_phrase_corpus(path)
    assert loaded[0].origin == "external_unmodified"
    assert loaded[0].matched_type is None


def test_phrase_corpus_errors_carry_line_numbers(tmp_path):
    bad_cols = tmp_path / "cols.tsv"
    bad_cols.write_text("img.jpg\tphrase\t0\t0\t10\n", encoding="utf-8")
    with pytest.raises(ValueError, match="cols.tsv:1"):
        read_phrase_corpus(bad_cols)
    bad_box = tmp_path / "box.tsv"
    bad_box.write_text(
        "# comment\nimg.jpg\tok\t0\t0\t50\t40\t100\t80\nimg.jpg\tbad\t60\t0\t50\t40\t100\t80\n",
        encoding="utf-8",
    )
    with pytest.raises(ValueError, match="box.tsv:3"):
        read_phrase_corpus(bad_box)
