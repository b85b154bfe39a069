"""Procedural toy dataset generator."""

from __future__ import annotations

from PIL import Image

from spanground.core import FRAME_SIZE
from spanground.dataset import load_dataset
from spanground.synthetic import LOC_COLOR, PER_COLOR, generate_synthetic


def test_generate_synthetic_shape(tmp_path):
    dataset = generate_synthetic(tmp_path / "data", counts=(8, 2, 2), seed=3)
    assert len(dataset.split("train")) == 8
    assert len(dataset.split("dev")) == 2
    assert len(dataset.split("test")) == 2
    for ex in dataset.split("train"):
        assert 6 <= len(ex.tokens) <= 10
        types = {s.etype for s in ex.gold_entities}
        assert types <= {"PER", "LOC"}
        assert len(ex.gold_entities) >= 1
        # One span per present type; every present type has a box.
        assert len(types) == len(ex.gold_entities)
        assert set(ex.gold_boxes) == types
        for box in ex.gold_boxes.values():
            assert 0 <= box.x1 < box.x2 <= FRAME_SIZE


def test_generate_synthetic_deterministic(tmp_path):
    a = generate_synthetic(tmp_path / "a", counts=(6, 1, 1), seed=11)
    b = generate_synthetic(tmp_path / "b", counts=(6, 1, 1), seed=11)
    assert a.split("train") == b.split("train")
    assert a.boxes_raw == b.boxes_raw
    c = generate_synthetic(tmp_path / "c", counts=(6, 1, 1), seed=12)
    assert a.split("train") != c.split("train")


def test_generated_blocks_painted_at_annotated_pixels(tmp_path):
    dataset = generate_synthetic(tmp_path / "data", counts=(8, 1, 1), seed=5)
    colors = {"PER": PER_COLOR, "LOC": LOC_COLOR}
    for ex in dataset.split("train"):
        img = Image.open(dataset.image_path(ex.image_ref)).convert("RGB")
        for (image_id, etype), (x1, y1, x2, y2, w, h) in dataset.boxes_raw.items():
            if image_id != ex.image_ref:
                continue
            cx, cy = int((x1 + x2) / 2), int((y1 + y2) / 2)
            assert img.getpixel((cx, cy)) == colors[etype]
            # Just outside a corner the canvas is gray background or the
            # other block, never this block's color.
            ox = int(x1) - 2
            if ox >= 0:
                pixel = img.getpixel((ox, cy))
                assert pixel != colors[etype]


def test_generated_dataset_reloads_identically(tmp_path):
    root = tmp_path / "data"
    first = generate_synthetic(root, counts=(4, 1, 1), seed=9)
    second = load_dataset(root)
    for split in ("train", "dev", "test"):
        assert first.split(split) == second.split(split)
