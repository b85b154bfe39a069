"""Joint model: encoders, fusion, existence interaction, both task heads."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from torch import Tensor, nn

from .core import BBox, EntitySpan, QueryInstance
from .encoders import (
    ImageEncoder,
    TextEncoder,
    TextEncoding,
    VisualPyramid,
    build_reference_encoders,
)
from .existence import ExistenceInteraction, InteractionState
from .fusion import CrossModalFusion, FusedState
from .grounding import AnchorSet, GroundingHead, GroundingPrediction, qg_loss
from .heads import (
    DecodeThresholds,
    MatchCandidate,
    SentenceLayout,
    SpanHeads,
    SpanProbabilities,
    build_match_pairs,
    ed_loss,
    esp_loss,
    extract_spans,
)
from .objective import BalanceState, LossBundle, total_loss


@dataclass
class ForwardState:
    """Everything one forward pass produces for a single query instance."""

    encoding: TextEncoding
    pyramid: VisualPyramid
    fused: FusedState
    interaction: InteractionState
    probs: SpanProbabilities
    grounding: GroundingPrediction
    layout: SentenceLayout


@dataclass
class InstanceLosses:
    """Unweighted loss components for one instance."""

    l_qg: Tensor
    l_bbox: Tensor
    l_object: Tensor
    l_ed: Tensor
    l_esp: Tensor
    l_start: Tensor
    l_end: Tensor
    l_match: Tensor
    positive_anchor: int
    num_pairs: int


@dataclass
class BatchLosses:
    """Batch-mean components with the balance factor applied to the total."""

    total: Tensor
    l_qg: Tensor
    l_ed: Tensor
    l_esp: Tensor
    l_start: Tensor
    omega_f: float


@dataclass
class PredictionResult:
    spans: Tuple[EntitySpan, ...]
    box: BBox
    confidence: float
    exist_prob: float


class JointModel(nn.Module):
    """Per-instance forward over one (query, sentence, image) triple."""

    def __init__(
        self,
        text_encoder: TextEncoder,
        image_encoder: ImageEncoder,
        num_heads: int = 8,
        anchors: Optional[AnchorSet] = None,
        update_source: str = "start_end",
        share_scales: bool = False,
    ):
        super().__init__()
        if text_encoder.dim != image_encoder.dim:
            raise ValueError("text and image encoders must project to the same width")
        dim = text_encoder.dim
        self.dim = dim
        self.text_encoder = text_encoder
        self.image_encoder = image_encoder
        self.fusion = CrossModalFusion(
            dim,
            num_scales=len(image_encoder.geometry.grids),
            num_heads=num_heads,
            share_scales=share_scales,
        )
        self.interaction = ExistenceInteraction(dim, num_heads, update_source)
        self.heads = SpanHeads(dim)
        if anchors is None:
            anchors = AnchorSet(geometry=image_encoder.geometry)
        self.grounding = GroundingHead(dim, anchors)

    def forward(
        self,
        query_tokens: Sequence[str],
        sentence_tokens: Sequence[str],
        image: Tensor,
    ) -> ForwardState:
        encoding = self.text_encoder.encode(query_tokens, sentence_tokens)
        pyramid = self.image_encoder.encode(image)
        fused = self.fusion(encoding, pyramid)
        interaction = self.interaction(fused.h_u, fused.h_g)
        probs = self.heads(
            interaction.h_tilde_s, interaction.h_tilde_e, interaction.h_tilde_g
        )
        grounding = self.grounding(fused.q, pyramid)
        layout = SentenceLayout(encoding.token_alignment)
        return ForwardState(
            encoding=encoding,
            pyramid=pyramid,
            fused=fused,
            interaction=interaction,
            probs=probs,
            grounding=grounding,
            layout=layout,
        )

    def run_instance(self, instance: QueryInstance, image: Tensor) -> ForwardState:
        return self(instance.query_tokens, instance.sentence_tokens, image)

    def instance_losses(
        self,
        state: ForwardState,
        instance: QueryInstance,
        rng: Optional[random.Random] = None,
        max_pairs: int = 50,
        negative_ratio: int = 2,
        pairs: Optional[Sequence[MatchCandidate]] = None,
    ) -> InstanceLosses:
        gold_pairs = [(s.start, s.end) for s in instance.gold_spans]
        if pairs is None:
            pairs = build_match_pairs(
                state.layout,
                gold_pairs,
                state.probs.p_start.detach(),
                state.probs.p_end.detach(),
                max_pairs=max_pairs,
                negative_ratio=negative_ratio,
                rng=rng,
            )
        esp = esp_loss(
            self.heads,
            state.probs,
            state.interaction.h_tilde_s,
            state.interaction.h_tilde_e,
            state.layout,
            gold_pairs,
            pairs,
        )
        l_ed = ed_loss(state.probs.exist_margin, instance.exists)
        g = qg_loss(state.grounding, instance.gold_box)
        return InstanceLosses(
            l_qg=g.total,
            l_bbox=g.l_bbox,
            l_object=g.l_object,
            l_ed=l_ed,
            l_esp=esp.total,
            l_start=esp.l_start,
            l_end=esp.l_end,
            l_match=esp.l_match,
            positive_anchor=g.positive_index,
            num_pairs=esp.num_pairs,
        )

    def predict(
        self, state: ForwardState, etype: str, thresholds: DecodeThresholds = DecodeThresholds()
    ) -> PredictionResult:
        h_s = state.interaction.h_tilde_s
        h_e = state.interaction.h_tilde_e

        def match_fn(i: int, j: int) -> float:
            return float(self.heads.match_prob(h_s, h_e, i, j))

        token_spans = extract_spans(
            state.probs.p_start, state.probs.p_end, match_fn, state.layout, thresholds
        )
        spans = tuple(EntitySpan(start=s, end=e, etype=etype) for s, e in token_spans)
        box, confidence, _ = state.grounding.select()
        return PredictionResult(
            spans=spans,
            box=box,
            confidence=confidence,
            exist_prob=float(state.probs.p_exist[0, 1]),
        )


def batch_losses(
    per_instance: Sequence[InstanceLosses],
    balance: BalanceState,
    lambda1: float = 1.0,
    lambda2: float = 2.0,
    omega_override: Optional[float] = None,
) -> BatchLosses:
    """Mean the instance components, then weigh per the joint objective.

    The balance factor comes from the batch-mean detached start and
    grounding losses, recomputed every step unless overridden.
    """
    if not per_instance:
        raise ValueError("batch_losses needs at least one instance")
    l_qg = torch.stack([x.l_qg for x in per_instance]).mean()
    l_ed = torch.stack([x.l_ed for x in per_instance]).mean()
    l_esp = torch.stack([x.l_esp for x in per_instance]).mean()
    l_start = torch.stack([x.l_start for x in per_instance]).mean()
    if omega_override is not None:
        omega = float(omega_override)
    else:
        omega = balance.update(float(l_start.detach()), float(l_qg.detach()))
    total = total_loss(
        LossBundle(
            l_qg=l_qg, l_ed=l_ed, l_esp=l_esp, omega_f=omega,
            lambda1=lambda1, lambda2=lambda2,
        )
    )
    return BatchLosses(
        total=total, l_qg=l_qg, l_ed=l_ed, l_esp=l_esp, l_start=l_start, omega_f=omega
    )


def build_model(
    dim: int = 64,
    num_heads: int = 8,
    dropout: float = 0.3,
    text_hidden: int = 64,
    text_layers: int = 2,
    text_heads: int = 4,
    visual_channels: Tuple[int, int, int] = (48, 32, 24),
    vocab_size: int = 1024,
    max_positions: int = 128,
    anchors: Optional[AnchorSet] = None,
    update_source: str = "start_end",
    share_scales: bool = False,
    finetune_text: bool = True,
    seed: Optional[int] = None,
) -> JointModel:
    """Reference-backend model in float64, optionally seeded."""
    if seed is not None:
        torch.manual_seed(seed)
    text, image = build_reference_encoders(
        dim=dim,
        dropout=dropout,
        text_hidden=text_hidden,
        text_layers=text_layers,
        text_heads=text_heads,
        visual_channels=visual_channels,
        vocab_size=vocab_size,
        max_positions=max_positions,
        finetune_text=finetune_text,
    )
    model = JointModel(
        text,
        image,
        num_heads=num_heads,
        anchors=anchors,
        update_source=update_source,
        share_scales=share_scales,
    )
    return model.double()


def load_image_tensor(path: str, frame: int = 256) -> Tensor:
    """Load and resize an image file to a (3, frame, frame) float64 tensor in [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((frame, frame))
        data = torch.frombuffer(bytearray(rgb.tobytes()), dtype=torch.uint8)
    return data.reshape(frame, frame, 3).permute(2, 0, 1).to(torch.float64) / 255.0
