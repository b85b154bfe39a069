"""Procedural toy dataset: colored-block images with matching sentences.

Two entity types are exercised: person names co-occur with a red block,
location names with a blue block. Absent types have no block, leaving the
whole-image convention to the instance builder. Everything is driven by
one seed, so regeneration is reproducible.
"""

from __future__ import annotations

import random
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

from PIL import Image, ImageDraw

from .core import EntitySpan, ExamplePair
from .dataset import Dataset, RawBox, load_dataset, write_boxes, write_sentences

PER_FIRST = ("alice", "bob", "carol", "david", "erin", "frank", "grace", "henry")
PER_LAST = ("miller", "stone", "vance", "reed")
LOC_NAMES = ("paris", "london", "tokyo", "berlin", "cairo", "oslo", "lima", "quito")
FILLERS = (
    "the", "a", "today", "we", "saw", "met", "went", "to", "with", "near",
    "at", "and", "smiled", "again", "happily", "then", "later", "quietly",
)

PER_COLOR = (210, 40, 40)
LOC_COLOR = (40, 70, 210)

# Quadrant centers of the 64x64 canvas where blocks may appear.
_QUADRANTS = ((16, 16), (48, 16), (16, 48), (48, 48))


def _make_sentence(
    rng: random.Random, has_per: bool, has_loc: bool
) -> Tuple[List[str], List[EntitySpan]]:
    """6-10 token sentence with at most one span per present type."""
    tokens: List[str] = []
    spans: List[EntitySpan] = []

    def fill(count: int) -> None:
        tokens.extend(rng.choice(FILLERS) for _ in range(count))

    target = rng.randint(6, 10)
    entities: List[Tuple[str, List[str]]] = []
    if has_per:
        name = [rng.choice(PER_FIRST)]
        if rng.random() < 0.5:
            name.append(rng.choice(PER_LAST))
        entities.append(("PER", name))
    if has_loc:
        entities.append(("LOC", [rng.choice(LOC_NAMES)]))
    rng.shuffle(entities)

    entity_tokens = sum(len(words) for _, words in entities)
    slots = len(entities) + 1
    filler_budget = max(target - entity_tokens, slots)
    cuts = sorted(rng.randint(1, filler_budget - 1) for _ in range(slots - 1)) if slots > 1 else []
    sizes = [b - a for a, b in zip([0] + cuts, cuts + [filler_budget])]

    fill(sizes[0])
    for (etype, words), size in zip(entities, sizes[1:]):
        start = len(tokens)
        tokens.extend(words)
        spans.append(EntitySpan(start=start, end=len(tokens) - 1, etype=etype))
        fill(size)
    if not entities:
        fill(filler_budget - len(tokens))
    return tokens, spans


# Side ranges per type, in canvas pixels. The two types live in different
# size classes so their boxes match anchor priors on different pyramid
# scales and the grounding head's multi-scale routing is exercised.
_BLOCK_SIDES = {"PER": (20, 28), "LOC": (10, 13)}


def _place_block(
    rng: random.Random, quadrant: Tuple[int, int], size: int, sides: Tuple[int, int]
) -> Tuple[int, int, int, int]:
    cx = quadrant[0] + rng.randint(-4, 4)
    cy = quadrant[1] + rng.randint(-4, 4)
    w = rng.randint(*sides)
    h = rng.randint(*sides)
    x1 = max(0, min(size - w, cx - w // 2))
    y1 = max(0, min(size - h, cy - h // 2))
    return x1, y1, x1 + w, y1 + h


def _render_image(
    path: Path,
    size: int,
    rng: random.Random,
    blocks: Sequence[Tuple[Tuple[int, int, int, int], Tuple[int, int, int]]],
) -> None:
    shade = 195 + rng.randint(-15, 15)
    img = Image.new("RGB", (size, size), (shade, shade, shade))
    draw = ImageDraw.Draw(img)
    for (x1, y1, x2, y2), color in blocks:
        # PIL rectangles include the second corner pixel.
        draw.rectangle((x1, y1, x2 - 1, y2 - 1), fill=color)
    img.save(path)


def generate_synthetic(
    root: str | Path,
    counts: Tuple[int, int, int] = (32, 4, 4),
    seed: int = 7,
    image_size: int = 64,
) -> Dataset:
    """Write a complete dataset directory and load it back."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    boxes: Dict[Tuple[str, str], RawBox] = {}
    for split_name, count in zip(("train", "dev", "test"), counts):
        examples: List[ExamplePair] = []
        for index in range(count):
            image_id = f"{split_name}-{index:03d}"
            has_per = rng.random() < 0.8
            has_loc = rng.random() < 0.8
            if not (has_per or has_loc):
                has_per = True
            tokens, spans = _make_sentence(rng, has_per, has_loc)

            quadrants = rng.sample(_QUADRANTS, 2)
            blocks = []
            gold_boxes = {}
            for present, etype, color, quadrant in (
                (has_per, "PER", PER_COLOR, quadrants[0]),
                (has_loc, "LOC", LOC_COLOR, quadrants[1]),
            ):
                if not present:
                    continue
                rect = _place_block(rng, quadrant, image_size)
                blocks.append((rect, color))
                boxes[(image_id, etype)] = (
                    float(rect[0]), float(rect[1]), float(rect[2]), float(rect[3]),
                    image_size, image_size,
                )
                gold_boxes[etype] = rect
            _render_image(root / "images" / f"{image_id}.png", image_size, rng, blocks)
            examples.append(
                ExamplePair(
                    id=f"{split_name}:{index:06d}",
                    tokens=tuple(tokens),
                    image_ref=image_id,
                    gold_entities=tuple(spans),
                    split=split_name,
                )
            )
        write_sentences(root / f"{split_name}.txt", examples)
    write_boxes(root / "boxes.txt", boxes)
    return load_dataset(root)
