"""BIO sentence files, box records, dataset directory loading."""

from __future__ import annotations

import pytest
from PIL import Image

from spanground.core import BBox, EntitySpan
from spanground.dataset import (
    Dataset,
    bio_to_spans,
    load_dataset,
    parse_sentences,
    read_boxes,
    write_boxes,
    write_sentences,
)


def test_bio_to_spans_basic():
    tags = ["O", "B-PER", "I-PER", "O", "B-LOC"]
    assert bio_to_spans(tags) == [EntitySpan(1, 2, "PER"), EntitySpan(4, 4, "LOC")]
    assert bio_to_spans(["O", "O"]) == []
    # Adjacent B- tags close the previous span.
    assert bio_to_spans(["B-PER", "B-PER"]) == [EntitySpan(0, 0, "PER"), EntitySpan(1, 1, "PER")]
    # Span running to the end of the sentence is closed.
    assert bio_to_spans(["B-ORG", "I-ORG"]) == [EntitySpan(0, 1, "ORG")]


def test_bio_to_spans_strictness():
    with pytest.raises(ValueError, match="<tags>:0.*I-PER"):
        bio_to_spans(["I-PER"])
    with pytest.raises(ValueError, match=":12"):
        bio_to_spans(["B-PER", "O", "I-PER"], base_line=10)
    with pytest.raises(ValueError, match="I-LOC"):
        bio_to_spans(["B-PER", "I-LOC"])
    with pytest.raises(ValueError, match="unknown entity type"):
        bio_to_spans(["B-DATE"])
    with pytest.raises(ValueError, match="malformed"):
        bio_to_spans(["PER"])


def test_parse_sentences():
    text = "# img: im1\nhello\tO\nworld\tB-LOC\n\n# img: im2\nagain\tO\n"
    groups = parse_sentences(text)
    assert groups == [
        ("im1", ["hello", "world"], ["O", "B-LOC"], 2),
        ("im2", ["again"], ["O"], 6),
    ]


def test_parse_sentences_space_separated_tokens():
    # Last whitespace field is the tag; anything before is the token.
    groups = parse_sentences("# img: x\nNew York B-LOC\n")
    assert groups[0][1] == ["New York"]
    assert groups[0][2] == ["B-LOC"]


def test_parse_sentences_errors():
    with pytest.raises(ValueError, match=":2: sentence without"):
        parse_sentences("\nhello\tO\n")
    with pytest.raises(ValueError, match="header without any tokens"):
        parse_sentences("# img: im1\n\n")
    with pytest.raises(ValueError, match="middle of a sentence"):
        parse_sentences("# img: a\ntok\tO\n# img: b\ntok\tO\n")
    with pytest.raises(ValueError, match="empty image id"):
        parse_sentences("# img:\ntok\tO\n")
    with pytest.raises(ValueError, match="expected 'token TAG'"):
        parse_sentences("# img: a\nloneword\n")


def test_read_boxes(tmp_path):
    path = tmp_path / "boxes.txt"
    path.write_text(
        "# comment\nim1 PER 10 20 110 220 640 480\nim1 LOC 0 0 64 64 64 64\n",
        encoding="utf-8",
    )
    records = read_boxes(path)
    assert records[("im1", "PER")] == (10.0, 20.0, 110.0, 220.0, 640, 480)
    assert records[("im1", "LOC")] == (0.0, 0.0, 64.0, 64.0, 64, 64)


def test_read_boxes_errors(tmp_path):
    cases = {
        "short.txt": ("im1 PER 1 2 3 4 100\n", "expected 8 fields"),
        "type.txt": ("im1 DATE 1 2 3 4 100 100\n", "unknown entity type"),
        "number.txt": ("im1 PER one 2 3 4 100 100\n", "malformed box"),
        "bounds.txt": ("im1 PER 0 0 200 50 100 100\n", "invalid"),
        "dup.txt": ("im1 PER 0 0 5 5 10 10\nim1 PER 1 1 6 6 10 10\n", "duplicate"),
    }
    for name, (content, message) in cases.items():
        path = tmp_path / name
        path.write_text(content, encoding="utf-8")
        with pytest.raises(ValueError, match=message):
            read_boxes(path)
        with pytest.raises(ValueError, match=name):
            read_boxes(path)


def _write_dataset(root, sentences=None):
    (root / "images").mkdir(parents=True)
    for image_id in ("im1", "im2"):
        Image.new("RGB", (64, 48), (90, 90, 90)).save(root / "images" / f"{image_id}.png")
    default = (
        "# img: im1\nalice\tB-PER\nsmith\tI-PER\nvisits\tO\nparis\tB-LOC\n\n"
        "# img: im2\nnothing\tO\nhere\tO\n"
    )
    (root / "train.txt").write_text(sentences or default, encoding="utf-8")
    (root / "boxes.txt").write_text(
        "im1 PER 10 10 30 40 64 48\nim1 LOC 5 5 60 40 64 48\n", encoding="utf-8"
    )


def test_load_dataset(tmp_path):
    _write_dataset(tmp_path)
    dataset = load_dataset(tmp_path)
    train = dataset.split("train")
    assert len(train) == 2
    first = train[0]
    assert first.id == "train:000000"
    assert first.tokens == ("alice", "smith", "visits", "paris")
    assert first.gold_entities == (EntitySpan(0, 1, "PER"), EntitySpan(3, 3, "LOC"))
    assert first.image_ref == "im1"
    # Boxes arrive rescaled into the working frame.
    assert first.gold_boxes["PER"] == BBox.from_original(10, 10, 30, 40, 64, 48)
    assert dataset.split("dev") == []
    with pytest.raises(ValueError):
        dataset.split("validation")
    assert dataset.image_path("im1").name == "im1.png"
    with pytest.raises(FileNotFoundError):
        dataset.image_path("im9")
    stats = dataset.stats()
    assert stats["train"]["sentences"] == 2
    assert stats["train"]["PER"] == 1
    assert stats["train"]["LOC"] == 1
    assert stats["train"]["ORG"] == 0


def test_load_dataset_order_stable(tmp_path):
    _write_dataset(tmp_path)
    a = load_dataset(tmp_path)
    b = load_dataset(tmp_path)
    assert a.split("train") == b.split("train")


def test_load_dataset_missing_image(tmp_path):
    _write_dataset(tmp_path, sentences="# img: ghost\ntok\tO\n")
    with pytest.raises(FileNotFoundError, match="ghost"):
        load_dataset(tmp_path)
    dataset = load_dataset(tmp_path, require_images=False)
    assert dataset.split("train")[0].image_ref == "ghost"


def test_load_dataset_empty_directory(tmp_path):
    with pytest.raises(FileNotFoundError, match="no sentences file"):
        load_dataset(tmp_path)


def test_load_dataset_reports_bio_error_line(tmp_path):
    _write_dataset(tmp_path, sentences="# img: im1\na\tO\nb\tI-PER\n")
    with pytest.raises(ValueError, match="train.txt:3"):
        load_dataset(tmp_path)


def test_round_trip_through_writers(tmp_path):
    _write_dataset(tmp_path)
    dataset = load_dataset(tmp_path)
    out = tmp_path / "copy"
    (out / "images").mkdir(parents=True)
    for image_id in ("im1", "im2"):
        Image.new("RGB", (64, 48), (90, 90, 90)).save(out / "images" / f"{image_id}.png")
    write_sentences(out / "train.txt", dataset.split("train"))
    write_boxes(out / "boxes.txt", dataset.boxes_raw)
    again = load_dataset(out)
    assert again.split("train") == dataset.split("train")
    assert again.boxes_raw == dataset.boxes_raw
    assert isinstance(again, Dataset)
