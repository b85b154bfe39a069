"""Prediction and evaluation drivers over loaded datasets."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import torch

from .core import BBox, EntitySpan, build_instances
from .dataset import Dataset
from .heads import DecodeThresholds
from .metrics import EvalReport, grounding_scores, span_prf
from .model import JointModel, load_image_tensor
from .querybank import QueryBank


def run_predictions(
    model: JointModel,
    bank: QueryBank,
    dataset: Dataset,
    split_name: str,
    thresholds: DecodeThresholds = DecodeThresholds(),
) -> List[dict]:
    """One record per (example, type) instance, in dataset order."""
    examples = dataset.split(split_name)
    if not examples:
        raise ValueError(f"split {split_name!r} is empty or missing")
    was_training = model.training
    model.eval()
    records: List[dict] = []
    image_cache: Dict[str, torch.Tensor] = {}
    with torch.no_grad():
        for example in examples:
            image = image_cache.get(example.image_ref)
            if image is None:
                image = load_image_tensor(str(dataset.image_path(example.image_ref)))
                image_cache[example.image_ref] = image
            for instance in build_instances(example, bank):
                state = model.run_instance(instance, image)
                result = model.predict(state, instance.etype, thresholds)
                records.append(
                    {
                        "id": example.id,
                        "type": instance.etype,
                        "spans": [[s.start, s.end] for s in result.spans],
                        "box": list(result.box.as_tuple()),
                        "confidence": result.confidence,
                        "exist_prob": result.exist_prob,
                    }
                )
    if was_training:
        model.train()
    return records


def report_from_records(
    records: Sequence[dict],
    dataset: Dataset,
    split_name: str,
    bank: QueryBank,
    grounding_subset: str = "all",
) -> EvalReport:
    """Score prediction records against the split's gold annotations."""
    examples = dataset.split(split_name)
    by_key: Dict[Tuple[str, str], dict] = {(r["id"], r["type"]): r for r in records}
    pred_spans: List[List[EntitySpan]] = []
    gold_spans: List[List[EntitySpan]] = []
    pred_boxes: List[BBox] = []
    gold_boxes: List[BBox] = []
    for example in examples:
        example_pred: List[EntitySpan] = []
        for instance in build_instances(example, bank):
            record = by_key.get((example.id, instance.etype))
            if record is None:
                continue
            example_pred.extend(
                EntitySpan(start=s, end=e, etype=instance.etype) for s, e in record["spans"]
            )
            if grounding_subset == "present" and not instance.exists:
                continue
            pred_boxes.append(BBox(*record["box"]))
            gold_boxes.append(instance.gold_box)
        pred_spans.append(example_pred)
        gold_spans.append(list(example.gold_entities))
    report = span_prf(pred_spans, gold_spans)
    grounding = grounding_scores(pred_boxes, gold_boxes) if pred_boxes else None
    return EvalReport(span=report, grounding=grounding)


def evaluate_model(
    model: JointModel,
    bank: QueryBank,
    dataset: Dataset,
    split_name: str,
    thresholds: DecodeThresholds = DecodeThresholds(),
    grounding_subset: str = "all",
) -> Tuple[EvalReport, List[dict]]:
    records = run_predictions(model, bank, dataset, split_name, thresholds)
    report = report_from_records(records, dataset, split_name, bank, grounding_subset)
    return report, records


def write_predictions(path: str | Path, records: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record) + "\n")


def read_predictions(path: str | Path) -> List[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
