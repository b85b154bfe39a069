"""Multi-scale cross-modality interaction.

Summarizes the query tokens into a single vector q, injects the visual
pyramid into every token representation (one attention per scale, merged
by elementwise mean, then a feed-forward mix with the original tokens),
and summarizes the whole sequence into the initial existence vector H_g.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
from torch import Tensor, nn

from .attention import MultiHeadAttention, SummaryAttention
from .encoders import TextEncoding, VisualPyramid


@dataclass
class FusedState:
    """Outputs of the fusion stage for one (query, sentence, image) triple."""

    q: Tensor  # (1, d) summarized query
    h_u: Tensor  # (c, d) visually fused tokens
    h_g: Tensor  # (1, d) initial existence summary
    query_weights: Tensor  # (m,) attention over query tokens
    existence_weights: Tensor  # (c,) attention over all positions


class CrossModalFusion(nn.Module):
    """Query summary, per-scale visual attention, and existence summary.

    The per-scale attentions are unshared by default; ``share_scales``
    reuses one attention block across all pyramid levels.
    """

    def __init__(
        self,
        dim: int,
        num_scales: int = 3,
        num_heads: int = 8,
        share_scales: bool = False,
    ):
        super().__init__()
        self.dim = dim
        self.num_scales = num_scales
        self.query_summary = SummaryAttention(dim)
        self.existence_summary = SummaryAttention(dim)
        if share_scales:
            shared = MultiHeadAttention(dim, num_heads)
            self.scale_attentions = nn.ModuleList([shared] * num_scales)
        else:
            self.scale_attentions = nn.ModuleList(
                MultiHeadAttention(dim, num_heads) for _ in range(num_scales)
            )
        self.ffn = nn.Sequential(nn.Linear(2 * dim, dim), nn.ReLU(), nn.Linear(dim, dim))

    def summarize_query(self, query_rows: Tensor) -> Tuple[Tensor, Tensor]:
        """(m, d) query-token rows -> ((1, d) summary, (m,) weights)."""
        if query_rows.shape[0] == 0:
            raise ValueError("cannot summarize an empty query")
        return self.query_summary(query_rows)

    def summarize_existence(self, h_prime: Tensor) -> Tuple[Tensor, Tensor]:
        """(c, d) full sequence -> ((1, d) summary, (c,) weights)."""
        return self.existence_summary(h_prime)

    def cross_modal_fuse(self, h_prime: Tensor, pyramid: VisualPyramid) -> Tensor:
        """Attend every token over each pyramid scale and mix with the original.

        H_i = Attention(query=H', kv=U_i); H_a = mean_i H_i;
        H_u = FFN([H_a ; H']).
        """
        if len(pyramid.levels) != self.num_scales:
            raise ValueError(
                f"pyramid has {len(pyramid.levels)} levels, fusion expects {self.num_scales}"
            )
        per_scale = [
            attn(h_prime, level)
            for attn, level in zip(self.scale_attentions, pyramid.levels)
        ]  # each (c, d)
        h_a = torch.stack(per_scale, dim=0).mean(dim=0)  # (c, d)
        return self.ffn(torch.cat([h_a, h_prime], dim=1))  # (c, d)

    def forward(self, encoding: TextEncoding, pyramid: VisualPyramid) -> FusedState:
        q, query_weights = self.summarize_query(encoding.query_matrix())
        h_u = self.cross_modal_fuse(encoding.h_prime, pyramid)
        h_g, existence_weights = self.summarize_existence(encoding.h_prime)
        return FusedState(
            q=q,
            h_u=h_u,
            h_g=h_g,
            query_weights=query_weights,
            existence_weights=existence_weights,
        )
