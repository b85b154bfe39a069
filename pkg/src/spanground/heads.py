"""Prediction heads: existence detection, start/end boundaries, pair matching.

All classification losses use binary cross-entropy. Two-class softmax
heads are trained through the logit margin (class-1 logit minus class-0
logit), which equals BCE on the softmax probability but stays stable for
saturated logits.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Collection, List, Optional, Sequence, Tuple

import torch
from torch import Tensor, nn
from torch.nn import functional as F


@dataclass(frozen=True)
class SentenceLayout:
    """Where each sentence token lives inside the encoder sequence.

    ``alignment[t]`` is the inclusive (first, last) encoder-row range of
    sentence token t. Boundary labels attach to the first row for starts
    and the last row for ends.
    """

    alignment: Tuple[Tuple[int, int], ...]

    def __post_init__(self) -> None:
        last = -1
        for lo, hi in self.alignment:
            if lo > hi or lo <= last:
                raise ValueError(f"alignment ranges must be ordered and disjoint: {self.alignment}")
            last = hi

    @property
    def num_tokens(self) -> int:
        return len(self.alignment)

    @property
    def positions(self) -> Tuple[int, ...]:
        """All encoder rows in the sentence region, ascending."""
        return tuple(p for lo, hi in self.alignment for p in range(lo, hi + 1))

    def start_position(self, token: int) -> int:
        return self.alignment[token][0]

    def end_position(self, token: int) -> int:
        return self.alignment[token][1]

    def token_of(self, position: int) -> int:
        for t, (lo, hi) in enumerate(self.alignment):
            if lo <= position <= hi:
                return t
        raise ValueError(f"encoder position {position} is outside the sentence region")


@dataclass(frozen=True)
class DecodeThresholds:
    boundary: float = 0.5
    match: float = 0.5
    max_span_length: int = 16

    def __post_init__(self) -> None:
        if self.max_span_length < 1:
            raise ValueError("max_span_length must be at least 1")


@dataclass
class SpanProbabilities:
    """Row-stochastic head outputs plus the logit margins used for losses."""

    p_start: Tensor  # (c, 2)
    p_end: Tensor  # (c, 2)
    p_exist: Tensor  # (1, 2)
    start_margin: Tensor  # (c,)
    end_margin: Tensor  # (c,)
    exist_margin: Tensor  # ()


@dataclass(frozen=True)
class MatchCandidate:
    """One training pair: encoder start/end positions and the gold label."""

    start: int
    end: int
    label: bool

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValueError(f"start position {self.start} is after end position {self.end}")


class SpanHeads(nn.Module):
    """Linear heads over the existence-aware representations."""

    def __init__(self, dim: int):
        super().__init__()
        self.start_proj = nn.Linear(dim, 2, bias=False)
        self.end_proj = nn.Linear(dim, 2, bias=False)
        self.exist_proj = nn.Linear(dim, 2, bias=False)
        self.match_proj = nn.Linear(2 * dim, 1, bias=False)

    def forward(self, h_tilde_s: Tensor, h_tilde_e: Tensor, h_tilde_g: Tensor) -> SpanProbabilities:
        start_logits = self.start_proj(h_tilde_s)  # (c, 2)
        end_logits = self.end_proj(h_tilde_e)  # (c, 2)
        exist_logits = self.exist_proj(h_tilde_g)  # (1, 2)
        return SpanProbabilities(
            p_start=torch.softmax(start_logits, dim=1),
            p_end=torch.softmax(end_logits, dim=1),
            p_exist=torch.softmax(exist_logits, dim=1),
            start_margin=start_logits[:, 1] - start_logits[:, 0],
            end_margin=end_logits[:, 1] - end_logits[:, 0],
            exist_margin=exist_logits[0, 1] - exist_logits[0, 0],
        )

    def match_logit(self, h_tilde_s: Tensor, h_tilde_e: Tensor, i: int, j: int) -> Tensor:
        if i > j:
            raise ValueError(f"start position {i} is after end position {j}")
        pair = torch.cat([h_tilde_s[i], h_tilde_e[j]])  # (2d,)
        return self.match_proj(pair).squeeze(0)

    def match_prob(self, h_tilde_s: Tensor, h_tilde_e: Tensor, i: int, j: int) -> Tensor:
        return torch.sigmoid(self.match_logit(h_tilde_s, h_tilde_e, i, j))


def apply_position_mask(p: Tensor, keep: Collection[int]) -> Tensor:
    """Force rows outside ``keep`` to class-0 probability 1."""
    masked = p.new_zeros(p.shape)
    masked[:, 0] = 1.0
    idx = sorted(keep)
    masked[idx] = p[idx]
    return masked


def ed_loss(exist_margin: Tensor, exists: bool) -> Tensor:
    """Binary cross-entropy on the single existence label."""
    target = exist_margin.new_tensor(1.0 if exists else 0.0)
    return F.binary_cross_entropy_with_logits(exist_margin, target)


def boundary_loss(margin: Tensor, positions: Sequence[int], positive: Collection[int]) -> Tensor:
    """Summed BCE over the sentence positions; target 1 at ``positive`` rows."""
    idx = list(positions)
    logits = margin[idx]
    targets = margin.new_tensor([1.0 if p in positive else 0.0 for p in idx])
    return F.binary_cross_entropy_with_logits(logits, targets, reduction="sum")


def build_match_pairs(
    layout: SentenceLayout,
    gold_spans: Sequence[Tuple[int, int]],
    p_start: Tensor,
    p_end: Tensor,
    boundary_threshold: float = 0.5,
    max_pairs: int = 50,
    negative_ratio: int = 2,
    rng: Optional[random.Random] = None,
) -> Tuple[MatchCandidate, ...]:
    """Training pairs for the match head.

    Positives are the gold pairs; negatives are the remaining gold-start x
    gold-end combinations, then up to ``negative_ratio`` times the size of
    that base set sampled from currently predicted boundary positions.
    Without an rng the lexicographically smallest pool pairs are taken.
    No gold spans means no pairs at all.
    """
    gold_pairs = {
        (layout.start_position(s), layout.end_position(e)) for s, e in gold_spans
    }
    if not gold_pairs:
        return ()
    gold_starts = sorted({i for i, _ in gold_pairs})
    gold_ends = sorted({j for _, j in gold_pairs})
    positives = sorted(gold_pairs)
    cross = sorted(
        (s, e)
        for s in gold_starts
        for e in gold_ends
        if s <= e and (s, e) not in gold_pairs
    )
    taken = gold_pairs | set(cross)
    pred_starts = [p for p in layout.positions if float(p_start[p, 1]) > boundary_threshold]
    pred_ends = [p for p in layout.positions if float(p_end[p, 1]) > boundary_threshold]
    pool = sorted(
        (s, e) for s in pred_starts for e in pred_ends if s <= e and (s, e) not in taken
    )
    cap = negative_ratio * (len(positives) + len(cross))
    if rng is not None and len(pool) > cap:
        sampled = sorted(rng.sample(pool, cap))
    else:
        sampled = pool[:cap]
    pairs = (
        [MatchCandidate(s, e, True) for s, e in positives]
        + [MatchCandidate(s, e, False) for s, e in cross]
        + [MatchCandidate(s, e, False) for s, e in sampled]
    )
    return tuple(pairs[:max_pairs])


@dataclass
class EspLoss:
    total: Tensor
    l_start: Tensor
    l_end: Tensor
    l_match: Tensor
    num_pairs: int


def esp_loss(
    heads: SpanHeads,
    probs: SpanProbabilities,
    h_tilde_s: Tensor,
    h_tilde_e: Tensor,
    layout: SentenceLayout,
    gold_spans: Sequence[Tuple[int, int]],
    pairs: Sequence[MatchCandidate],
) -> EspLoss:
    """L_start + L_end + L_match, each a BCE sum; match over given pairs."""
    start_targets = {layout.start_position(s) for s, _ in gold_spans}
    end_targets = {layout.end_position(e) for _, e in gold_spans}
    l_start = boundary_loss(probs.start_margin, layout.positions, start_targets)
    l_end = boundary_loss(probs.end_margin, layout.positions, end_targets)
    if pairs:
        logits = torch.stack(
            [heads.match_logit(h_tilde_s, h_tilde_e, c.start, c.end) for c in pairs]
        )
        labels = logits.new_tensor([1.0 if c.label else 0.0 for c in pairs])
        l_match = F.binary_cross_entropy_with_logits(logits, labels, reduction="sum")
    else:
        l_match = probs.start_margin.new_zeros(())
    return EspLoss(l_start + l_end + l_match, l_start, l_end, l_match, len(pairs))


def extract_spans(
    p_start: Tensor,
    p_end: Tensor,
    match_fn: Callable[[int, int], float],
    layout: SentenceLayout,
    thresholds: DecodeThresholds = DecodeThresholds(),
) -> List[Tuple[int, int]]:
    """Greedy non-overlapping span decode, in sentence-token indices.

    Boundary candidates are sentence positions whose class-1 probability
    clears the boundary threshold; (start, end) candidates within the
    length limit keep their match score if it clears the match threshold;
    spans are then taken in descending score order (ties by position),
    skipping overlaps.
    """
    starts = [p for p in layout.positions if float(p_start[p, 1]) > thresholds.boundary]
    ends = [p for p in layout.positions if float(p_end[p, 1]) > thresholds.boundary]
    scored = []
    for i in starts:
        ti = layout.token_of(i)
        for j in ends:
            if i > j:
                continue
            tj = layout.token_of(j)
            if tj - ti >= thresholds.max_span_length:
                continue
            score = float(match_fn(i, j))
            if score > thresholds.match:
                scored.append((score, i, j, ti, tj))
    scored.sort(key=lambda item: (-item[0], item[1], item[2]))
    chosen: List[Tuple[int, int]] = []
    for _, _, _, ti, tj in scored:
        if all(tj < s or ti > e for s, e in chosen):
            chosen.append((ti, tj))
    return sorted(chosen)
