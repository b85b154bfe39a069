"""Shared domain model: entity spans, boxes, examples, query instances."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

ENTITY_TYPES: Tuple[str, ...] = ("PER", "LOC", "ORG", "OTHER")
SPLITS: Tuple[str, ...] = ("train", "dev", "test")

# All model-side geometry lives in the resized image frame.
FRAME_SIZE: float = 256.0


@dataclass(frozen=True)
class EntitySpan:
    """Token-level entity span with inclusive boundaries.

    Indices refer to sentence tokens, not encoder subwords; subword
    alignment is the encoder adapter's job.
    """

    start: int
    end: int
    etype: str

    def __post_init__(self) -> None:
        if self.etype not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {self.etype!r}, expected one of {ENTITY_TYPES}")
        if not (0 <= self.start <= self.end):
            raise ValueError(f"invalid span boundaries ({self.start}, {self.end})")

    def overlaps(self, other: "EntitySpan") -> bool:
        return self.start <= other.end and other.start <= self.end


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in the resized FRAME_SIZE x FRAME_SIZE pixel frame."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x1 < self.x2 <= FRAME_SIZE and 0.0 <= self.y1 < self.y2 <= FRAME_SIZE):
            raise ValueError(
                f"box ({self.x1}, {self.y1}, {self.x2}, {self.y2}) violates "
                f"0 <= x1 < x2 <= {FRAME_SIZE} (and same for y)"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def area(self) -> float:
        return self.width * self.height

    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @staticmethod
    def from_original(
        x1: float, y1: float, x2: float, y2: float, orig_width: float, orig_height: float
    ) -> "BBox":
        """Convert a box given in original image pixels into the resized frame."""
        if orig_width <= 0 or orig_height <= 0:
            raise ValueError(f"invalid original image size {orig_width}x{orig_height}")
        sx = FRAME_SIZE / orig_width
        sy = FRAME_SIZE / orig_height
        return BBox(x1 * sx, y1 * sy, x2 * sx, y2 * sy)


def whole_image_box() -> BBox:
    """Gold box convention for queries whose type is absent from the sentence."""
    return BBox(0.0, 0.0, FRAME_SIZE, FRAME_SIZE)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two valid boxes; 0.0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    return inter / union


@dataclass(frozen=True)
class ExamplePair:
    """One sentence-image pair with its gold annotations."""

    id: str
    tokens: Tuple[str, ...]
    image_ref: str
    gold_entities: Tuple[EntitySpan, ...] = ()
    gold_boxes: Mapping[str, BBox] = field(default_factory=dict)
    split: str = "train"

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "gold_entities", tuple(self.gold_entities))
        object.__setattr__(self, "gold_boxes", dict(self.gold_boxes))
        if not self.tokens:
            raise ValueError(f"example {self.id!r} has an empty sentence")
        if self.split not in SPLITS:
            raise ValueError(f"example {self.id!r}: unknown split {self.split!r}")
        n = len(self.tokens)
        for span in self.gold_entities:
            if span.end >= n:
                raise ValueError(
                    f"example {self.id!r}: span ({span.start}, {span.end}) exceeds sentence length {n}"
                )
        for etype in self.gold_boxes:
            if etype not in ENTITY_TYPES:
                raise ValueError(f"example {self.id!r}: box for unknown type {etype!r}")


@dataclass(frozen=True)
class QueryInstance:
    """One (sentence, image, entity-type query) unit for training or inference."""

    example_id: str
    etype: str
    query_tokens: Tuple[str, ...]
    gold_spans: Tuple[EntitySpan, ...]
    exists: int
    gold_box: BBox
    image_ref: str = ""
    sentence_tokens: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "query_tokens", tuple(self.query_tokens))
        object.__setattr__(self, "gold_spans", tuple(self.gold_spans))
        object.__setattr__(self, "sentence_tokens", tuple(self.sentence_tokens))
        if self.exists != (1 if self.gold_spans else 0):
            raise ValueError(
                f"instance ({self.example_id!r}, {self.etype}): exists={self.exists} "
                f"inconsistent with {len(self.gold_spans)} gold spans"
            )


def build_instances(example: ExamplePair, bank, require_boxes: bool = True) -> List[QueryInstance]:
    """Materialize one QueryInstance per entity type for an example.

    Gold entities are partitioned by type.  A type with no box annotation
    gets the whole-image box when absent from the sentence; when present,
    a missing box is an error unless ``require_boxes`` is False.
    """
    by_type: Dict[str, List[EntitySpan]] = {t: [] for t in ENTITY_TYPES}
    for span in example.gold_entities:
        by_type[span.etype].append(span)

    instances: List[QueryInstance] = []
    for etype in ENTITY_TYPES:
        spans = tuple(sorted(by_type[etype], key=lambda s: (s.start, s.end)))
        exists = 1 if spans else 0
        box = example.gold_boxes.get(etype)
        if box is None:
            if exists and require_boxes:
                raise ValueError(
                    f"example {example.id!r}: no box annotation for present type {etype}"
                )
            box = whole_image_box()
        instances.append(
            QueryInstance(
                example_id=example.id,
                etype=etype,
                query_tokens=bank.query_tokens(etype),
                gold_spans=spans,
                exists=exists,
                gold_box=box,
                image_ref=example.image_ref,
                sentence_tokens=example.tokens,
            )
        )
    return instances


def spans_to_bio(spans: Sequence[EntitySpan], length: int) -> List[str]:
    """Render spans as BIO tags (used for export and round-trip checks)."""
    tags = ["O"] * length
    for span in sorted(spans, key=lambda s: (s.start, s.end)):
        tags[span.start] = f"B-{span.etype}"
        for i in range(span.start + 1, span.end + 1):
            tags[i] = f"I-{span.etype}"
    return tags
