"""Weak-supervision grounding corpus: filter, query replacement, merge, split.

External region-phrase pairs are kept when their phrase embedding is close
enough (cosine) to one of the four type queries; kept samples are copied
with the phrase replaced by the matched query's full text; the result is
merged with in-domain samples, shuffled once, and split 9:0.5:0.5.
"""

from __future__ import annotations

import random
import zlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, ENTITY_TYPES
from .querybank import QueryBank, simple_tokenize

ORIGIN_TAGS = ("external_unmodified", "external_query_replaced", "in_domain")

DEFAULT_TAU = 0.7
DEFAULT_RATIO = (9.0, 0.5, 0.5)
SPLIT_NAMES = ("train", "val", "test")

Embedder = Callable[[str], np.ndarray]


@dataclass(frozen=True)
class PhraseSample:
    """One region-phrase pair in its original pixel frame."""

    uid: str
    image_ref: str
    phrase: str
    x1: float
    y1: float
    x2: float
    y2: float
    width: int
    height: int
    origin: str
    matched_type: Optional[str] = None
    score: Optional[float] = None

    def __post_init__(self) -> None:
        if self.origin not in ORIGIN_TAGS:
            raise ValueError(f"origin must be one of {ORIGIN_TAGS}, got {self.origin!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.x1 < self.x2 <= self.width and 0 <= self.y1 < self.y2 <= self.height):
            raise ValueError(
                f"box ({self.x1}, {self.y1}, {self.x2}, {self.y2}) invalid for "
                f"{self.width}x{self.height} image in sample {self.uid}"
            )
        if self.matched_type is not None and self.matched_type not in ENTITY_TYPES:
            raise ValueError(f"unknown matched type {self.matched_type!r}")

    def frame_box(self) -> BBox:
        """The box scaled into the model's working frame."""
        return BBox.from_original(self.x1, self.y1, self.x2, self.y2, self.width, self.height)


@dataclass
class FilterResult:
    kept: Tuple[PhraseSample, ...]
    skipped_zero_norm: int


def hashed_embedder(dim: int = 64) -> Embedder:
    """Deterministic bag-of-words embedding: per-token hashed Gaussian, mean-pooled.

    Stands in for a contextual sentence embedder; real runs plug in their
    own adapter with the same signature.
    """

    def embed(text: str) -> np.ndarray:
        tokens = simple_tokenize(text.lower())
        if not tokens:
            return np.zeros(dim)
        vectors = []
        for token in tokens:
            rng = np.random.default_rng(zlib.crc32(token.encode("utf-8")))
            vectors.append(rng.standard_normal(dim))
        return np.mean(vectors, axis=0)

    return embed


def filter_by_similarity(
    corpus: Sequence[PhraseSample],
    bank: QueryBank,
    embedder: Embedder,
    tau: float = DEFAULT_TAU,
) -> FilterResult:
    """Keep samples whose best cosine against the four query texts reaches tau.

    The kept copies carry the argmax type and its score. Zero-norm phrase
    embeddings are skipped and counted; a zero-norm query embedding is a
    configuration error.
    """
    if not 0 < tau < 1:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    query_vectors: Dict[str, np.ndarray] = {}
    for etype in ENTITY_TYPES:
        vec = np.asarray(embedder(bank.query_text(etype)), dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ValueError(f"query embedding for {etype} has zero norm")
        query_vectors[etype] = vec / norm
    kept: List[PhraseSample] = []
    skipped = 0
    for sample in corpus:
        vec = np.asarray(embedder(sample.phrase), dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0:
            skipped += 1
            continue
        unit = vec / norm
        best_type, best_score = None, -np.inf
        for etype in ENTITY_TYPES:
            score = float(unit @ query_vectors[etype])
            if score > best_score:
                best_type, best_score = etype, score
        if best_score >= tau:
            kept.append(replace(sample, matched_type=best_type, score=best_score))
    return FilterResult(kept=tuple(kept), skipped_zero_norm=skipped)


def replace_queries(filtered: Sequence[PhraseSample], bank: QueryBank) -> List[PhraseSample]:
    """One copy per kept sample with the phrase swapped for the matched query text."""
    copies = []
    for sample in filtered:
        if sample.matched_type is None:
            raise ValueError(f"sample {sample.uid} has no matched type")
        copies.append(
            replace(
                sample,
                uid=f"{sample.uid}#q",
                phrase=bank.query_text(sample.matched_type),
                origin="external_query_replaced",
            )
        )
    return copies


def split_sizes(n: int, ratio: Sequence[float] = DEFAULT_RATIO) -> Tuple[int, ...]:
    """Largest-remainder apportionment of n items over the ratio."""
    if n <= 0:
        raise ValueError("cannot split an empty corpus")
    if any(r <= 0 for r in ratio):
        raise ValueError(f"ratio parts must be positive, got {tuple(ratio)}")
    total = sum(ratio)
    exact = [n * r / total for r in ratio]
    sizes = [int(e) for e in exact]
    remainders = [e - s for e, s in zip(exact, sizes)]
    shortfall = n - sum(sizes)
    for index in sorted(range(len(ratio)), key=lambda i: (-remainders[i], i))[:shortfall]:
        sizes[index] += 1
    return tuple(sizes)


def merge_and_split(
    sets: Sequence[Sequence[PhraseSample]],
    ratio: Sequence[float] = DEFAULT_RATIO,
    seed: int = 0,
) -> Dict[str, List[PhraseSample]]:
    """Shuffle all samples together and partition into train/val/test."""
    merged = [sample for group in sets for sample in group]
    if not merged:
        raise ValueError("cannot split an empty corpus")
    merged.sort(key=lambda s: s.uid)
    random.Random(seed).shuffle(merged)
    sizes = split_sizes(len(merged), ratio)
    splits: Dict[str, List[PhraseSample]] = {}
    cursor = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        splits[name] = merged[cursor : cursor + size]
        cursor += size
    return splits


def build_corpus(
    external: Sequence[PhraseSample],
    in_domain: Sequence[PhraseSample],
    bank: QueryBank,
    embedder: Embedder,
    tau: float = DEFAULT_TAU,
    ratio: Sequence[float] = DEFAULT_RATIO,
    seed: int = 0,
) -> Tuple[Dict[str, List[PhraseSample]], FilterResult]:
    """Full pipeline: filter external, copy with query texts, merge, split."""
    result = filter_by_similarity(external, bank, embedder, tau)
    replaced = replace_queries(result.kept, bank)
    splits = merge_and_split([result.kept, replaced, list(in_domain)], ratio, seed)
    return splits, result


def read_phrase_corpus(path: str | Path, origin: str = "external_unmodified") -> List[PhraseSample]:
    """Read tab-separated phrase records.

    Columns: image_ref, phrase, x1, y1, x2, y2, width, height, then
    optionally origin, matched type, score.
    """
    samples = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) not in (8, 11):
            raise ValueError(f"{path}:{lineno}: expected 8 or 11 tab-separated fields, got {len(parts)}")
        try:
            sample = PhraseSample(
                uid=f"{Path(path).stem}:{lineno:06d}",
                image_ref=parts[0],
                phrase=parts[1],
                x1=float(parts[2]),
                y1=float(parts[3]),
                x2=float(parts[4]),
                y2=float(parts[5]),
                width=int(parts[6]),
                height=int(parts[7]),
                origin=parts[8] if len(parts) == 11 else origin,
                matched_type=(parts[9] or None) if len(parts) == 11 else None,
                score=float(parts[10]) if len(parts) == 11 and parts[10] else None,
            )
        except ValueError as err:
            raise ValueError(f"{path}:{lineno}: {err}") from err
        samples.append(sample)
    return samples


def write_phrase_corpus(path: str | Path, samples: Sequence[PhraseSample]) -> None:
    """Write the 11-column tab-separated form (origin, type, score included)."""
    lines = []
    for s in samples:
        lines.append(
            "\t".join(
                [
                    s.image_ref,
                    s.phrase,
                    repr(s.x1),
                    repr(s.y1),
                    repr(s.x2),
                    repr(s.y2),
                    str(s.width),
                    str(s.height),
                    s.origin,
                    s.matched_type or "",
                    repr(s.score) if s.score is not None else "",
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
