"""Draw gold and predicted boxes into image files for visual inspection."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

from PIL import Image, ImageDraw

from .core import BBox, FRAME_SIZE

GOLD_COLOR = (40, 200, 80)
PRED_COLOR = (230, 60, 60)


def render_example(
    image_path: str | Path,
    gold: Mapping[str, BBox],
    pred: Mapping[str, Tuple[BBox, float]],
    out_path: str | Path,
) -> None:
    """One output image: gold boxes in green, predictions in red, labels burned in."""
    frame = int(FRAME_SIZE)
    with Image.open(image_path) as img:
        canvas = img.convert("RGB").resize((frame, frame))
    draw = ImageDraw.Draw(canvas)
    for etype, box in gold.items():
        draw.rectangle(box.as_tuple(), outline=GOLD_COLOR, width=2)
        draw.text((box.x1 + 3, max(0.0, box.y1 - 12)), f"{etype} gold", fill=GOLD_COLOR)
    for etype, (box, confidence) in pred.items():
        draw.rectangle(box.as_tuple(), outline=PRED_COLOR, width=2)
        draw.text((box.x1 + 3, min(frame - 12, box.y2 + 2)), f"{etype} {confidence:.2f}", fill=PRED_COLOR)
    canvas.save(out_path)


def render_records(
    records,
    dataset,
    split_name: str,
    out_dir: str | Path,
    limit: Optional[int] = None,
    types: str = "present",
) -> int:
    """Render every example of a split from prediction records; returns count."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_example: Dict[str, Dict[str, Tuple[BBox, float]]] = {}
    for record in records:
        by_example.setdefault(record["id"], {})[record["type"]] = (
            BBox(*record["box"]),
            record["confidence"],
        )
    count = 0
    for example in dataset.split(split_name):
        if limit is not None and count >= limit:
            break
        pred = by_example.get(example.id, {})
        if types == "present":
            pred = {t: v for t, v in pred.items() if t in example.gold_boxes}
        render_example(
            dataset.image_path(example.image_ref),
            example.gold_boxes,
            pred,
            out / f"{example.id.replace(':', '-')}.png",
        )
        count += 1
    return count
