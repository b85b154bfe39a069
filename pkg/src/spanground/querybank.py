"""Entity-type queries under the four transformation strategies."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

from .core import ENTITY_TYPES

STRATEGIES: Tuple[str, ...] = ("keyword", "template", "wikipedia", "keyword_annotation")

# The best-performing strategy on both sub-tasks.
DEFAULT_STRATEGY = "keyword_annotation"

_KEYWORDS = {"PER": "Person", "LOC": "Location", "ORG": "Organization", "OTHER": "Others"}

# Texts marked reconstructed are editable stand-ins for wording the source
# material does not print in full; override via a query file if needed.
_DEFAULT_QUERIES: Dict[Tuple[str, str], Tuple[str, bool]] = {
    ("PER", "keyword"): ("Person", False),
    ("LOC", "keyword"): ("Location", False),
    ("ORG", "keyword"): ("Organization", False),
    ("OTHER", "keyword"): ("Others", True),
    ("PER", "template"): ("Please find Person", False),
    ("LOC", "template"): ("Please find Location", False),
    ("ORG", "template"): ("Please find Organization", False),
    ("OTHER", "template"): ("Please find Others", True),
    ("PER", "wikipedia"): (
        "A person is a being that has certain capacities or attributes such as reason, "
        "morality, consciousness or self-consciousness.",
        True,
    ),
    ("LOC", "wikipedia"): (
        "A location is a point or an area on the Earth's surface, such as a country, "
        "city, town or continent.",
        True,
    ),
    ("ORG", "wikipedia"): (
        "An organization is an entity, such as an institution or an association, that has "
        "a collective goal and is linked to an external environment.",
        False,
    ),
    ("OTHER", "wikipedia"): (
        "Miscellaneous entities are named things such as products, events and artworks "
        "that do not belong to the person, location or organization categories.",
        True,
    ),
    ("PER", "keyword_annotation"): ("Person: People's name and fictional character.", False),
    ("LOC", "keyword_annotation"): (
        "Location: Country, city, town continent by geographical location.",
        False,
    ),
    ("ORG", "keyword_annotation"): (
        "Organization: Include club, company, government party, school government, "
        "and news organization.",
        False,
    ),
    ("OTHER", "keyword_annotation"): (
        "Others: Names of products, events, artworks and other miscellaneous entities.",
        True,
    ),
}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def simple_tokenize(text: str) -> Tuple[str, ...]:
    """Whitespace/punctuation tokenizer used by query texts and the reference encoder."""
    return tuple(_TOKEN_RE.findall(text))


@dataclass(frozen=True)
class QuerySpec:
    """A rendered query for one entity type under one strategy."""

    etype: str
    strategy: str
    text: str
    reconstructed: bool = False

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("query text must be nonempty")

    @property
    def tokens(self) -> Tuple[str, ...]:
        return simple_tokenize(self.text)


def make_query(
    etype: str, strategy: str = DEFAULT_STRATEGY, overrides: Mapping[str, str] | None = None
) -> QuerySpec:
    """Render the query for an entity type; deterministic for fixed inputs."""
    if etype not in ENTITY_TYPES:
        raise ValueError(f"unknown entity type {etype!r}, expected one of {ENTITY_TYPES}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}, valid strategies: {', '.join(STRATEGIES)}")
    if overrides:
        key = f"{etype}.{strategy}"
        if key in overrides:
            return QuerySpec(etype, strategy, overrides[key], reconstructed=False)
    text, reconstructed = _DEFAULT_QUERIES[(etype, strategy)]
    return QuerySpec(etype, strategy, text, reconstructed)


def load_query_overrides(path: str) -> Dict[str, str]:
    """Parse a query-override file of ``TYPE.strategy = text`` lines."""
    overrides: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'TYPE.strategy = text', got {line!r}")
            key, text = line.split("=", 1)
            key = key.strip()
            text = text.strip()
            parts = key.split(".")
            if len(parts) != 2 or parts[0] not in ENTITY_TYPES or parts[1] not in STRATEGIES:
                raise ValueError(f"{path}:{lineno}: bad query key {key!r}")
            if not text:
                raise ValueError(f"{path}:{lineno}: empty query text for {key!r}")
            overrides[key] = text
    return overrides


class QueryBank:
    """Queries for all four types under one strategy, with optional overrides."""

    def __init__(self, strategy: str = DEFAULT_STRATEGY, overrides: Mapping[str, str] | None = None):
        self.strategy = strategy
        self._specs = {t: make_query(t, strategy, overrides) for t in ENTITY_TYPES}

    def spec(self, etype: str) -> QuerySpec:
        return self._specs[etype]

    def query_text(self, etype: str) -> str:
        return self._specs[etype].text

    def query_tokens(self, etype: str) -> Tuple[str, ...]:
        return self._specs[etype].tokens
