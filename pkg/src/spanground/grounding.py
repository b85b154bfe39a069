"""One-stage query grounding: anchors, offset prediction, decoding, loss.

The query summary is broadcast into every cell of every pyramid scale,
a 1x1 conv mixes the pair back to d channels, and a second 1x1 conv maps
the activated features to 3 anchors x (4 offsets + objectness) per cell.
Exactly one box comes out per query: the decoded anchor with the highest
objectness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from .core import BBox, iou
from .encoders import DEFAULT_GEOMETRY, PyramidGeometry, VisualPyramid

# 9 (width, height) priors in the 256-frame, ascending area. The last
# three serve the coarsest grid; the largest must be able to reach
# whole-image boxes used for absent types.
DEFAULT_PRIORS: Tuple[Tuple[float, float], ...] = (
    (8.0, 8.0),
    (16.0, 16.0),
    (24.0, 24.0),
    (32.0, 48.0),
    (48.0, 32.0),
    (64.0, 64.0),
    (96.0, 128.0),
    (128.0, 96.0),
    (192.0, 192.0),
)

PRIORS_PER_CELL = 3

# Offset magnitudes beyond this are saturated anyway; the clamp keeps
# exp() finite on adversarial inputs.
_OFFSET_LIMIT = 30.0

# Initial objectness probability; see GroundingHead bias initialization.
OBJECTNESS_PRIOR = 1e-3

# Initial scale multiplier on the query half of the fusion convs; see
# GroundingHead.__init__.
QUERY_INIT_GAIN = 4.0

# Gold size offsets are clamped to keep log-ratio targets bounded.
TARGET_SIZE_LIMIT = 4.0


@dataclass(frozen=True)
class AnchorSet:
    """Anchor priors plus the flat indexing scheme over all candidate boxes.

    Flat order is (scale, row, col, anchor) lexicographic with scales
    coarsest first; the smallest three priors go to the finest grid.
    """

    priors: Tuple[Tuple[float, float], ...] = DEFAULT_PRIORS
    geometry: PyramidGeometry = DEFAULT_GEOMETRY

    def __post_init__(self) -> None:
        object.__setattr__(self, "priors", tuple(tuple(map(float, p)) for p in self.priors))
        expected = PRIORS_PER_CELL * len(self.geometry.grids)
        if len(self.priors) != expected:
            raise ValueError(f"need {expected} priors, got {len(self.priors)}")
        for w, h in self.priors:
            if w <= 0 or h <= 0:
                raise ValueError(f"anchor sizes must be positive, got ({w}, {h})")

    @property
    def num_scales(self) -> int:
        return len(self.geometry.grids)

    @property
    def total(self) -> int:
        return PRIORS_PER_CELL * self.geometry.num_locations

    def scale_priors(self, scale: int) -> Tuple[Tuple[float, float], ...]:
        """The three priors of one scale; coarsest scale takes the largest."""
        lo = (self.num_scales - 1 - scale) * PRIORS_PER_CELL
        return self.priors[lo : lo + PRIORS_PER_CELL]

    def scale_offset(self, scale: int) -> int:
        """Flat index of the first anchor of ``scale``."""
        return PRIORS_PER_CELL * sum(g * g for g in self.geometry.grids[:scale])

    def flat_index(self, scale: int, row: int, col: int, anchor: int) -> int:
        g = self.geometry.grids[scale]
        if not (0 <= row < g and 0 <= col < g and 0 <= anchor < PRIORS_PER_CELL):
            raise IndexError(f"anchor address ({scale},{row},{col},{anchor}) out of range")
        return self.scale_offset(scale) + (row * g + col) * PRIORS_PER_CELL + anchor

    def unflatten(self, index: int) -> Tuple[int, int, int, int]:
        if not 0 <= index < self.total:
            raise IndexError(f"flat anchor index {index} out of range 0..{self.total - 1}")
        for scale, g in enumerate(self.geometry.grids):
            count = PRIORS_PER_CELL * g * g
            if index < count:
                cell, anchor = divmod(index, PRIORS_PER_CELL)
                row, col = divmod(cell, g)
                return scale, row, col, anchor
            index -= count
        raise AssertionError("unreachable")

    def neutral_box(self, scale: int, row: int, col: int, anchor: int) -> BBox:
        """Decoded box at zero offsets: cell center, exact prior size."""
        stride = self.geometry.strides[scale]
        w, h = self.scale_priors(scale)[anchor]
        return decode_box((0.0, 0.0, 0.0, 0.0), (w, h), row, col, stride, self.geometry.frame_size)


_NEUTRAL_CACHE: Dict[AnchorSet, np.ndarray] = {}


def neutral_boxes(anchors: AnchorSet) -> np.ndarray:
    """Corner-form (total, 4) array of all neutral decodes, flat order."""
    cached = _NEUTRAL_CACHE.get(anchors)
    if cached is not None:
        return cached
    frame = anchors.geometry.frame_size
    rows = np.empty((anchors.total, 4))
    for scale, g in enumerate(anchors.geometry.grids):
        stride = anchors.geometry.strides[scale]
        priors = anchors.scale_priors(scale)
        base = anchors.scale_offset(scale)
        for row in range(g):
            for col in range(g):
                cell = base + (row * g + col) * PRIORS_PER_CELL
                cx = (col + 0.5) * stride
                cy = (row + 0.5) * stride
                for a, (w, h) in enumerate(priors):
                    rows[cell + a] = (
                        max(0.0, cx - w / 2),
                        max(0.0, cy - h / 2),
                        min(frame, cx + w / 2),
                        min(frame, cy + h / 2),
                    )
    _NEUTRAL_CACHE[anchors] = rows
    return rows


def decode_box(
    t: Sequence[float],
    anchor: Tuple[float, float],
    row: int,
    col: int,
    stride: float,
    frame: float = 256.0,
) -> BBox:
    """Offsets -> corner box: center = (cell + sigmoid(t)) * stride, size = prior * exp(t).

    The box is clipped to the frame; the center always stays strictly
    inside, so clipping never collapses the box.
    """
    tx, ty, tw, th = (max(-_OFFSET_LIMIT, min(_OFFSET_LIMIT, float(v))) for v in t)
    cx = (col + _sigmoid(tx)) * stride
    cy = (row + _sigmoid(ty)) * stride
    w = anchor[0] * math.exp(tw)
    h = anchor[1] * math.exp(th)
    return BBox(
        x1=max(0.0, cx - w / 2),
        y1=max(0.0, cy - h / 2),
        x2=min(frame, cx + w / 2),
        y2=min(frame, cy + h / 2),
    )


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def estimate_anchors(
    sizes: Sequence[Tuple[float, float]],
    k: int = 9,
    iterations: int = 50,
    seed: int = 0,
) -> Tuple[Tuple[float, float], ...]:
    """K-means over (w, h) pairs under the 1 - IoU distance of centered boxes.

    Returns k priors sorted by ascending area, ready for an AnchorSet.
    """
    data = np.asarray([(float(w), float(h)) for w, h in sizes])
    if data.ndim != 2 or data.shape[0] < k:
        raise ValueError(f"need at least {k} box sizes, got {len(sizes)}")
    if np.any(data <= 0):
        raise ValueError("box sizes must be positive")
    rng = np.random.default_rng(seed)
    centers = data[rng.choice(data.shape[0], size=k, replace=False)].copy()
    assignment = np.full(data.shape[0], -1)
    for _ in range(iterations):
        inter = np.minimum(data[:, None, 0], centers[None, :, 0]) * np.minimum(
            data[:, None, 1], centers[None, :, 1]
        )
        union = (
            data[:, 0] * data[:, 1]
        )[:, None] + (centers[:, 0] * centers[:, 1])[None, :] - inter
        new_assignment = np.argmax(inter / union, axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(k):
            members = data[assignment == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    order = np.argsort(centers[:, 0] * centers[:, 1], kind="stable")
    return tuple((float(w), float(h)) for w, h in centers[order])


@dataclass
class GroundingPrediction:
    """Raw per-scale offset tensors plus the anchor bookkeeping.

    Each level has shape (15, g, g): channel = anchor * 5 + field, with
    fields (t_x, t_y, t_w, t_h, objectness-logit).
    """

    levels: Tuple[Tensor, ...]
    anchors: AnchorSet = field(default_factory=AnchorSet)

    def __post_init__(self) -> None:
        self.levels = tuple(self.levels)
        grids = self.anchors.geometry.grids
        if len(self.levels) != len(grids):
            raise ValueError(f"{len(self.levels)} levels for {len(grids)} grids")
        for level, g in zip(self.levels, grids):
            if level.shape != (PRIORS_PER_CELL * 5, g, g):
                raise ValueError(
                    f"level shape {tuple(level.shape)}, expected ({PRIORS_PER_CELL * 5}, {g}, {g})"
                )

    def offsets(self, scale: int, row: int, col: int, anchor: int) -> Tensor:
        """(4,) offsets of one anchor."""
        return self.levels[scale][anchor * 5 : anchor * 5 + 4, row, col]

    def objectness(self, scale: int, row: int, col: int, anchor: int) -> Tensor:
        return self.levels[scale][anchor * 5 + 4, row, col]

    def flat_objectness(self) -> Tensor:
        """(total,) objectness logits in flat anchor order."""
        parts = []
        for level in self.levels:
            g = level.shape[-1]
            obj = level.view(PRIORS_PER_CELL, 5, g, g)[:, 4]  # (3, g, g)
            parts.append(obj.permute(1, 2, 0).reshape(-1))
        return torch.cat(parts)

    def flat_offsets(self) -> Tensor:
        """(total, 4) offsets in flat anchor order."""
        parts = []
        for level in self.levels:
            g = level.shape[-1]
            box = level.view(PRIORS_PER_CELL, 5, g, g)[:, :4]  # (3, 4, g, g)
            parts.append(box.permute(2, 3, 0, 1).reshape(-1, 4))
        return torch.cat(parts)

    def decode(self, flat_index: int) -> BBox:
        scale, row, col, anchor = self.anchors.unflatten(flat_index)
        t = self.offsets(scale, row, col, anchor).detach().tolist()
        prior = self.anchors.scale_priors(scale)[anchor]
        return decode_box(
            t, prior, row, col,
            self.anchors.geometry.strides[scale],
            self.anchors.geometry.frame_size,
        )

    def select(self) -> Tuple[BBox, float, int]:
        """Best box by objectness; ties go to the lowest flat index."""
        logits = self.flat_objectness().detach().cpu().numpy()
        index = int(np.argmax(logits))
        return self.decode(index), _sigmoid(float(logits[index])), index


class GroundingHead(nn.Module):
    """Spatial query fusion and offset prediction over all scales."""

    def __init__(self, dim: int, anchors: AnchorSet | None = None):
        super().__init__()
        self.dim = dim
        self.anchors = anchors if anchors is not None else AnchorSet()
        n = self.anchors.num_scales
        self.fuse_convs = nn.ModuleList(
            nn.Conv2d(2 * dim, dim, kernel_size=1) for _ in range(n)
        )
        # The activation sits between the fuse and prediction convs, so the
        # query participates nonlinearly in per-location scores; without it
        # the query term cancels out of every within-scale objectness
        # comparison and selection degenerates to a query-blind ranking.
        self.act = nn.LeakyReLU(0.1)
        self.pred_convs = nn.ModuleList(
            nn.Conv2d(dim, PRIORS_PER_CELL * 5, kernel_size=1) for _ in range(n)
        )
        # Objectness biases start at a low prior probability so the lone
        # positive anchor is not drowned out by the initial gradient mass
        # of thousands of negatives (one-stage detector initialization).
        # The query half of the fusion weights starts amplified so distinct
        # queries separate activation patterns from the first step; the
        # query's within-scale influence otherwise emerges too slowly.
        with torch.no_grad():
            for conv in self.pred_convs:
                for anchor in range(PRIORS_PER_CELL):
                    conv.bias[anchor * 5 + 4].fill_(
                        math.log(OBJECTNESS_PRIOR / (1.0 - OBJECTNESS_PRIOR))
                    )
            for conv in self.fuse_convs:
                conv.weight[:, dim:].mul_(QUERY_INIT_GAIN)

    def fuse_spatial(self, q: Tensor, pyramid: VisualPyramid) -> List[Tensor]:
        """Concat the broadcast query under every cell, mix back to d channels."""
        if q.shape != (1, self.dim):
            raise ValueError(f"query summary must be (1, {self.dim}), got {tuple(q.shape)}")
        fused = []
        for scale, conv in enumerate(self.fuse_convs):
            grid = pyramid.grid(scale).permute(2, 0, 1)  # (d, g, g)
            g = grid.shape[-1]
            qmap = q.reshape(self.dim, 1, 1).expand(self.dim, g, g)
            stacked = torch.cat([grid, qmap], dim=0)  # (2d, g, g), visual half first
            fused.append(conv(stacked.unsqueeze(0)).squeeze(0))  # (d, g, g)
        return fused

    def predict_offsets(self, fused: Sequence[Tensor]) -> GroundingPrediction:
        levels = tuple(
            conv(self.act(grid).unsqueeze(0)).squeeze(0)  # (15, g, g)
            for conv, grid in zip(self.pred_convs, fused)
        )
        return GroundingPrediction(levels, self.anchors)

    def forward(self, q: Tensor, pyramid: VisualPyramid) -> GroundingPrediction:
        return self.predict_offsets(self.fuse_spatial(q, pyramid))


def positive_anchor(anchors: AnchorSet, gold: BBox) -> int:
    """Flat index of the neutral-decode box with the highest IoU against gold."""
    boxes = neutral_boxes(anchors)
    ix1 = np.maximum(boxes[:, 0], gold.x1)
    iy1 = np.maximum(boxes[:, 1], gold.y1)
    ix2 = np.minimum(boxes[:, 2], gold.x2)
    iy2 = np.minimum(boxes[:, 3], gold.y2)
    inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = areas + gold.area() - inter
    return int(np.argmax(inter / union))


def encode_targets(anchors: AnchorSet, flat_index: int, gold: BBox) -> Tensor:
    """Gold regression targets (sigmoid-space center, log-ratio size)."""
    scale, row, col, anchor = anchors.unflatten(flat_index)
    stride = anchors.geometry.strides[scale]
    pw, ph = anchors.scale_priors(scale)[anchor]
    cx, cy = gold.center()
    sx = min(max(cx / stride - col, 0.0), 1.0)
    sy = min(max(cy / stride - row, 0.0), 1.0)
    tw = min(max(math.log(gold.width / pw), -TARGET_SIZE_LIMIT), TARGET_SIZE_LIMIT)
    th = min(max(math.log(gold.height / ph), -TARGET_SIZE_LIMIT), TARGET_SIZE_LIMIT)
    return torch.tensor([sx, sy, tw, th], dtype=torch.float64)


@dataclass
class GroundingLoss:
    total: Tensor
    l_bbox: Tensor
    l_object: Tensor
    positive_index: int


def qg_loss(pred: GroundingPrediction, gold: BBox) -> GroundingLoss:
    """Box regression at the positive anchor plus objectness over all anchors.

    L_bbox is the mean squared error between (sigmoid(t_x), sigmoid(t_y),
    t_w, t_h) and the encoded gold targets; L_object is mean binary
    cross-entropy over every objectness logit, target 1 only at the
    positive anchor.
    """
    pos = positive_anchor(pred.anchors, gold)
    t = pred.flat_offsets()[pos]
    predicted = torch.stack([torch.sigmoid(t[0]), torch.sigmoid(t[1]), t[2], t[3]])
    target = encode_targets(pred.anchors, pos, gold).to(t.dtype)
    l_bbox = torch.mean((predicted - target) ** 2)

    logits = pred.flat_objectness()
    obj_target = torch.zeros_like(logits)
    obj_target[pos] = 1.0
    l_object = F.binary_cross_entropy_with_logits(logits, obj_target)
    return GroundingLoss(l_bbox + l_object, l_bbox, l_object, pos)
