"""Evaluation protocols: span micro-P/R/F1, box accuracy, mean IoU, Fleiss kappa."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Set, Tuple

import numpy as np

from .core import BBox, ENTITY_TYPES, EntitySpan, iou

# Agreement level measured in the human annotation pass that established
# the box conventions packaged here (for context when reading kappa values).
REFERENCE_ANNOTATION_KAPPA = 0.85


@dataclass
class SpanReport:
    """Micro exact-match span scores with audit counts."""

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    no_entities: bool
    per_type_f1: Dict[str, float] = field(default_factory=dict)


@dataclass
class GroundingReport:
    accu_050: float
    accu_075: float
    miou: float
    count: int


@dataclass
class EvalReport:
    span: SpanReport
    grounding: Optional[GroundingReport] = None


def _prf(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def _span_sets(
    pred: Sequence[Sequence[EntitySpan]], gold: Sequence[Sequence[EntitySpan]]
) -> Sequence[Tuple[Set, Set]]:
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} prediction lists vs {len(gold)} gold lists")
    # Duplicates inside one example count once.
    return [
        (
            {(s.start, s.end, s.etype) for s in p},
            {(s.start, s.end, s.etype) for s in g},
        )
        for p, g in zip(pred, gold)
    ]


def span_prf(
    pred: Sequence[Sequence[EntitySpan]], gold: Sequence[Sequence[EntitySpan]]
) -> SpanReport:
    """Micro-averaged exact-match (boundaries and type) span scores."""
    pairs = _span_sets(pred, gold)
    tp = sum(len(p & g) for p, g in pairs)
    fp = sum(len(p - g) for p, g in pairs)
    fn = sum(len(g - p) for p, g in pairs)
    precision, recall, f1 = _prf(tp, fp, fn)
    per_type: Dict[str, float] = {}
    for etype in ENTITY_TYPES:
        ttp = sum(len({s for s in p if s[2] == etype} & {s for s in g if s[2] == etype}) for p, g in pairs)
        tfp = sum(len({s for s in p if s[2] == etype} - {s for s in g if s[2] == etype}) for p, g in pairs)
        tfn = sum(len({s for s in g if s[2] == etype} - {s for s in p if s[2] == etype}) for p, g in pairs)
        per_type[etype] = _prf(ttp, tfp, tfn)[2]
    return SpanReport(
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        fn=fn,
        no_entities=(tp + fp + fn == 0),
        per_type_f1=per_type,
    )


def grounding_scores(pred: Sequence[BBox], gold: Sequence[BBox]) -> GroundingReport:
    """Accu@0.5, Accu@0.75 and mean IoU over paired boxes."""
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted boxes vs {len(gold)} gold boxes")
    if not pred:
        raise ValueError("grounding_scores needs at least one box pair")
    ious = [iou(p, g) for p, g in zip(pred, gold)]
    n = len(ious)
    return GroundingReport(
        accu_050=sum(v >= 0.5 for v in ious) / n,
        accu_075=sum(v >= 0.75 for v in ious) / n,
        miou=sum(ious) / n,
        count=n,
    )


def accuracy_at(pred: Sequence[BBox], gold: Sequence[BBox], tau: float) -> float:
    """Fraction of pairs with IoU at least tau."""
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted boxes vs {len(gold)} gold boxes")
    if not pred:
        raise ValueError("accuracy_at needs at least one box pair")
    return sum(iou(p, g) >= tau for p, g in zip(pred, gold)) / len(pred)


def fleiss_kappa(ratings: Sequence[Sequence[int]], raters: int) -> float:
    """Chance-corrected multi-rater agreement over an items x categories count table."""
    if raters < 2:
        raise ValueError("fleiss_kappa needs at least 2 raters")
    table = np.asarray(ratings, dtype=np.float64)
    if table.ndim != 2 or table.shape[0] == 0:
        raise ValueError("ratings must be a nonempty 2-d count table")
    for i, row in enumerate(table):
        if row.sum() != raters:
            raise ValueError(f"row {i} sums to {int(row.sum())}, expected {raters}")
        if np.any(row < 0):
            raise ValueError(f"row {i} has a negative count")
    n_items = table.shape[0]
    per_item = (np.square(table).sum(axis=1) - raters) / (raters * (raters - 1))
    p_observed = per_item.mean()
    category_share = table.sum(axis=0) / (n_items * raters)
    p_expected = float(np.square(category_share).sum())
    if p_expected >= 1.0:
        # All mass in one category: observed agreement is perfect too.
        return 1.0
    return float((p_observed - p_expected) / (1.0 - p_expected))


def format_report(report: EvalReport) -> str:
    """Human-readable table, one metric per line."""
    s = report.span
    lines = [
        "metric            value",
        f"precision         {s.precision:.4f}",
        f"recall            {s.recall:.4f}",
        f"f1                {s.f1:.4f}",
        f"tp/fp/fn          {s.tp}/{s.fp}/{s.fn}",
    ]
    if s.no_entities:
        lines.append("note              no entities on either side")
    for etype, value in sorted(s.per_type_f1.items()):
        lines.append(f"f1[{etype:<5}]         {value:.4f}")
    if report.grounding is not None:
        g = report.grounding
        lines += [
            f"accu@0.50         {g.accu_050:.4f}",
            f"accu@0.75         {g.accu_075:.4f}",
            f"miou              {g.miou:.4f}",
            f"boxes             {g.count}",
        ]
    return "\n".join(lines)


def report_records(report: EvalReport) -> Dict[str, float]:
    """Flat machine-readable key/value view of a report."""
    s = report.span
    records: Dict[str, float] = {
        "precision": s.precision,
        "recall": s.recall,
        "f1": s.f1,
        "tp": float(s.tp),
        "fp": float(s.fp),
        "fn": float(s.fn),
        "no_entities": float(s.no_entities),
    }
    for etype, value in s.per_type_f1.items():
        records[f"f1_{etype}"] = value
    if report.grounding is not None:
        records.update(
            accu_050=report.grounding.accu_050,
            accu_075=report.grounding.accu_075,
            miou=report.grounding.miou,
            boxes=float(report.grounding.count),
        )
    return records


def parse_records(text: str) -> Dict[str, float]:
    """Inverse of the key=value serialization emitted by the CLI."""
    records: Dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        records[key.strip()] = float(value.strip())
    return records
