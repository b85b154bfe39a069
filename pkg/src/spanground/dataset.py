"""Dataset I/O: BIO sentence files, box annotation file, image folder.

Layout of a dataset directory:

    train.txt / dev.txt / test.txt   token-per-line BIO, sentences separated
                                     by blank lines, each preceded by
                                     ``# img: <image_id>``
    boxes.txt                        one record per line:
                                     image_id type x1 y1 x2 y2 width height
                                     (original pixel coordinates)
    images/                          one file per image_id
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .core import BBox, ENTITY_TYPES, EntitySpan, ExamplePair, SPLITS, spans_to_bio

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".gif")

RawBox = Tuple[float, float, float, float, int, int]


def bio_to_spans(tags: Sequence[str], source: str = "<tags>", base_line: int = 0) -> List[EntitySpan]:
    """Strict BIO decode; I- without a matching B- is an error."""
    spans: List[EntitySpan] = []
    current: Optional[Tuple[int, str]] = None

    def close(last_index: int) -> None:
        nonlocal current
        if current is not None:
            spans.append(EntitySpan(start=current[0], end=last_index, etype=current[1]))
            current = None

    for i, tag in enumerate(tags):
        where = f"{source}:{base_line + i}"
        if tag == "O":
            close(i - 1)
        elif tag.startswith("B-"):
            close(i - 1)
            etype = tag[2:]
            if etype not in ENTITY_TYPES:
                raise ValueError(f"{where}: unknown entity type in tag {tag!r}")
            current = (i, etype)
        elif tag.startswith("I-"):
            etype = tag[2:]
            if etype not in ENTITY_TYPES:
                raise ValueError(f"{where}: unknown entity type in tag {tag!r}")
            if current is None or current[1] != etype:
                raise ValueError(f"{where}: {tag} without a preceding B-{etype}")
        else:
            raise ValueError(f"{where}: malformed tag {tag!r}")
    close(len(tags) - 1)
    return spans


def parse_sentences(text: str, source: str = "<sentences>") -> List[Tuple[str, List[str], List[str], int]]:
    """Split a sentence file into (image_id, tokens, tags, first_line) groups."""
    groups: List[Tuple[str, List[str], List[str], int]] = []
    image_id: Optional[str] = None
    tokens: List[str] = []
    tags: List[str] = []
    first_line = 0

    def flush(lineno: int) -> None:
        nonlocal image_id, tokens, tags
        if tokens:
            if image_id is None:
                raise ValueError(f"{source}:{first_line}: sentence without a '# img:' header")
            groups.append((image_id, tokens, tags, first_line))
        elif image_id is not None:
            raise ValueError(f"{source}:{lineno}: '# img:' header without any tokens")
        image_id, tokens, tags = None, [], []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush(lineno)
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if not body.startswith("img:"):
                continue  # other comments are ignored
            if tokens:
                raise ValueError(f"{source}:{lineno}: '# img:' header in the middle of a sentence")
            image_id = body[len("img:") :].strip()
            if not image_id:
                raise ValueError(f"{source}:{lineno}: empty image id")
            continue
        parts = line.rsplit(None, 1)
        if len(parts) != 2:
            raise ValueError(f"{source}:{lineno}: expected 'token TAG', got {line!r}")
        if not tokens:
            first_line = lineno
        tokens.append(parts[0])
        tags.append(parts[1])
    flush(len(text.splitlines()) + 1)
    return groups


def read_boxes(path: str | Path) -> Dict[Tuple[str, str], RawBox]:
    """Read the box annotation file keyed by (image_id, type), original pixels."""
    records: Dict[Tuple[str, str], RawBox] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        image_id, etype = parts[0], parts[1]
        if etype not in ENTITY_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown entity type {etype!r}")
        try:
            x1, y1, x2, y2 = (float(v) for v in parts[2:6])
            width, height = int(parts[6]), int(parts[7])
        except ValueError as err:
            raise ValueError(f"{path}:{lineno}: malformed box record: {err}") from err
        key = (image_id, etype)
        if key in records:
            raise ValueError(f"{path}:{lineno}: duplicate box for {key}")
        if not (0 <= x1 < x2 <= width and 0 <= y1 < y2 <= height):
            raise ValueError(
                f"{path}:{lineno}: box ({x1}, {y1}, {x2}, {y2}) invalid "
                f"for {width}x{height} image"
            )
        records[key] = (x1, y1, x2, y2, width, height)
    return records


def _index_images(images_dir: Path) -> Dict[str, Path]:
    index: Dict[str, Path] = {}
    if not images_dir.is_dir():
        return index
    for entry in sorted(images_dir.iterdir()):
        if entry.suffix.lower() in IMAGE_EXTENSIONS:
            index[entry.stem] = entry
            index.setdefault(entry.name, entry)
    return index


@dataclass
class Dataset:
    """Loaded dataset: examples per split plus image and raw-box lookups."""

    root: Path
    examples: Dict[str, List[ExamplePair]]
    images: Dict[str, Path]
    boxes_raw: Dict[Tuple[str, str], RawBox] = field(default_factory=dict)

    def split(self, name: str) -> List[ExamplePair]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}, expected one of {SPLITS}")
        return self.examples.get(name, [])

    def image_path(self, image_ref: str) -> Path:
        try:
            return self.images[image_ref]
        except KeyError:
            raise FileNotFoundError(f"no image file for id {image_ref!r}") from None

    def stats(self) -> Dict[str, Dict[str, int]]:
        """Sentence and per-type entity counts for every loaded split."""
        out: Dict[str, Dict[str, int]] = {}
        for split_name, examples in self.examples.items():
            counts = {"sentences": len(examples)}
            for etype in ENTITY_TYPES:
                counts[etype] = sum(
                    sum(1 for s in ex.gold_entities if s.etype == etype) for ex in examples
                )
            out[split_name] = counts
        return out


def load_dataset(
    root: str | Path,
    splits: Sequence[str] = SPLITS,
    require_images: bool = True,
) -> Dataset:
    """Load and validate a dataset directory."""
    root = Path(root)
    box_path = root / "boxes.txt"
    boxes_raw = read_boxes(box_path) if box_path.exists() else {}
    boxes: Dict[Tuple[str, str], BBox] = {
        key: BBox.from_original(*raw) for key, raw in boxes_raw.items()
    }
    images = _index_images(root / "images")

    examples: Dict[str, List[ExamplePair]] = {}
    found_any = False
    for split_name in splits:
        path = root / f"{split_name}.txt"
        if not path.exists():
            continue
        found_any = True
        groups = parse_sentences(path.read_text(encoding="utf-8"), source=str(path))
        split_examples: List[ExamplePair] = []
        for index, (image_id, tokens, tags, first_line) in enumerate(groups):
            spans = bio_to_spans(tags, source=str(path), base_line=first_line)
            if require_images and image_id not in images:
                raise FileNotFoundError(
                    f"{path}:{first_line}: image {image_id!r} not found under {root / 'images'}"
                )
            gold_boxes = {
                etype: boxes[(image_id, etype)]
                for etype in ENTITY_TYPES
                if (image_id, etype) in boxes
            }
            split_examples.append(
                ExamplePair(
                    id=f"{split_name}:{index:06d}",
                    tokens=tuple(tokens),
                    image_ref=image_id,
                    gold_entities=tuple(spans),
                    gold_boxes=gold_boxes,
                    split=split_name,
                )
            )
        examples[split_name] = split_examples
    if not found_any:
        raise FileNotFoundError(f"no sentences file ({'/'.join(splits)}.txt) under {root}")
    return Dataset(root=root, examples=examples, images=images, boxes_raw=boxes_raw)


def write_sentences(path: str | Path, examples: Sequence[ExamplePair]) -> None:
    """Write examples in the token-per-line BIO format."""
    blocks = []
    for ex in examples:
        tags = spans_to_bio(ex.gold_entities, len(ex.tokens))
        lines = [f"# img: {ex.image_ref}"]
        lines += [f"{token}\t{tag}" for token, tag in zip(ex.tokens, tags)]
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def write_boxes(path: str | Path, records: Mapping[Tuple[str, str], RawBox]) -> None:
    lines = []
    for (image_id, etype), (x1, y1, x2, y2, w, h) in sorted(records.items()):
        lines.append(f"{image_id} {etype} {x1} {y1} {x2} {y2} {w} {h}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
