"""Query construction strategies and override plumbing."""

from __future__ import annotations

import pytest

from spanground.core import ENTITY_TYPES
from spanground.querybank import (
    DEFAULT_STRATEGY,
    QueryBank,
    STRATEGIES,
    load_query_overrides,
    make_query,
    simple_tokenize,
)


def test_default_strategy_is_keyword_annotation():
    assert DEFAULT_STRATEGY == "keyword_annotation"
    assert set(STRATEGIES) == {"keyword", "template", "wikipedia", "keyword_annotation"}


def test_shipped_query_texts():
    assert make_query("PER", "keyword_annotation").text == (
        "Person: People's name and fictional character."
    )
    assert make_query("LOC", "keyword_annotation").text == (
        "Location: Country, city, town continent by geographical location."
    )
    assert make_query("ORG", "keyword_annotation").text == (
        "Organization: Include club, company, government party, school government, "
        "and news organization."
    )
    assert make_query("ORG", "keyword").text == "Organization"
    assert make_query("ORG", "template").text == "Please find Organization"
    assert make_query("ORG", "wikipedia").text == (
        "An organization is an entity, such as an institution or an association, that has "
        "a collective goal and is linked to an external environment."
    )


def test_reconstructed_flags():
    # Texts the source table leaves unprinted ship as editable stand-ins.
    assert make_query("OTHER", "keyword_annotation").reconstructed
    assert not make_query("PER", "keyword_annotation").reconstructed
    assert not make_query("LOC", "keyword_annotation").reconstructed
    assert not make_query("ORG", "keyword_annotation").reconstructed


def test_make_query_pure():
    for etype in ENTITY_TYPES:
        for strategy in STRATEGIES:
            a = make_query(etype, strategy)
            b = make_query(etype, strategy)
            assert a == b
            assert a.text


def test_strategies_distinct_per_type():
    for etype in ENTITY_TYPES:
        texts = {make_query(etype, s).text for s in STRATEGIES}
        assert len(texts) == len(STRATEGIES)


def test_unknown_inputs_rejected():
    with pytest.raises(ValueError, match="keyword"):
        make_query("PER", "zero_shot")
    with pytest.raises(ValueError, match="entity type"):
        make_query("DATE", "keyword")


def test_tokenizer_splits_punctuation():
    assert simple_tokenize("Person: People's name.") == (
        "Person",
        ":",
        "People",
        "'",
        "s",
        "name",
        ".",
    )


def test_overrides_and_bank(tmp_path):
    path = tmp_path / "queries.txt"
    path.write_text(
        "# custom wording\nPER.keyword_annotation = Who is mentioned?\n", encoding="utf-8"
    )
    overrides = load_query_overrides(str(path))
    assert overrides == {"PER.keyword_annotation": "Who is mentioned?"}
    spec = make_query("PER", "keyword_annotation", overrides)
    assert spec.text == "Who is mentioned?"
    assert not spec.reconstructed

    bank = QueryBank(overrides=overrides)
    assert bank.query_text("PER") == "Who is mentioned?"
    assert bank.query_tokens("PER") == ("Who", "is", "mentioned", "?")
    assert bank.query_text("ORG").startswith("Organization:")
    assert bank.spec("LOC").etype == "LOC"


def test_override_file_errors(tmp_path):
    bad_key = tmp_path / "bad_key.txt"
    bad_key.write_text("PER.unknown = text\n", encoding="utf-8")
    with pytest.raises(ValueError, match="bad_key.txt:1"):
        load_query_overrides(str(bad_key))
    no_eq = tmp_path / "no_eq.txt"
    no_eq.write_text("PER.keyword text\n", encoding="utf-8")
    with pytest.raises(ValueError, match="no_eq.txt:1"):
        load_query_overrides(str(no_eq))
    empty = tmp_path / "empty_text.txt"
    empty.write_text("PER.keyword =\n", encoding="utf-8")
    with pytest.raises(ValueError, match="empty"):
        load_query_overrides(str(empty))
