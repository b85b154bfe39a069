"""Label attention and the existence-aware token interaction.

Each token attends over a two-entry label embedding table (separately for
start, end, and existence roles), then the existence vector is pushed into
the start/end matrices through single-key attention with a residual
layer norm, and is itself updated by attending back over the boundary
matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .attention import MultiHeadAttention

UPDATE_SOURCES = ("start_end", "tokens", "start")


class LabelTable(nn.Module):
    """Trainable 2-row embedding tables for the start/end/exist label sets."""

    def __init__(self, dim: int):
        super().__init__()
        self.start = nn.Embedding(2, dim)
        self.end = nn.Embedding(2, dim)
        self.exist = nn.Embedding(2, dim)

    def rows(self, role: str) -> Tensor:
        """All label embeddings for one role as a (2, d) matrix."""
        table: nn.Embedding = getattr(self, role)
        return table.weight


class LabelAttention(nn.Module):
    """Multi-head attention of tokens over label embeddings.

    Output = W_l [H^l ; H] with W_l mapping 2d -> d, so the enhanced matrix
    keeps the token shape.
    """

    def __init__(self, dim: int, num_heads: int = 8):
        super().__init__()
        self.attn = MultiHeadAttention(dim, num_heads)
        self.out = nn.Linear(2 * dim, dim, bias=False)

    def forward(self, tokens: Tensor, labels: Tensor) -> Tensor:
        if labels.shape[0] != 2:
            raise ValueError(f"label table must have 2 rows, got {labels.shape[0]}")
        h_l = self.attn(tokens, labels)  # (c, d)
        return self.out(torch.cat([h_l, tokens], dim=1))  # (c, d)


class ExistenceAware(nn.Module):
    """Broadcast the (projected) existence vector into every row.

    With a single key/value row the attention softmax is identically one,
    so Z is the projected existence row repeated c times; the output is
    LayerNorm(H + Z).
    """

    def __init__(self, dim: int, num_heads: int = 8):
        super().__init__()
        self.attn = MultiHeadAttention(dim, num_heads)
        self.norm = nn.LayerNorm(dim)

    def forward(self, h_x: Tensor, h_hat_g: Tensor) -> Tensor:
        if h_hat_g.shape[0] != 1:
            raise ValueError("existence vector must be a single row")
        z = self.attn(h_x, h_hat_g)  # (c, d), every row = projected h_hat_g
        return self.norm(h_x + z)


class ExistenceUpdate(nn.Module):
    """Update the existence vector by attending over token matrices.

    ``source`` picks the key/value rows: the stacked start and end matrices
    (default), the fused tokens, or the start matrix alone.
    """

    def __init__(self, dim: int, num_heads: int = 8, source: str = "start_end"):
        super().__init__()
        if source not in UPDATE_SOURCES:
            raise ValueError(f"source must be one of {UPDATE_SOURCES}, got {source!r}")
        self.attn = MultiHeadAttention(dim, num_heads)
        self.norm = nn.LayerNorm(dim)
        self.source = source

    def forward(self, h_hat_g: Tensor, h_s: Tensor, h_e: Tensor, h_u: Tensor) -> Tensor:
        if self.source == "start_end":
            kv = torch.cat([h_s, h_e], dim=0)  # (2c, d)
        elif self.source == "tokens":
            kv = h_u
        else:
            kv = h_s
        z = self.attn(h_hat_g, kv)  # (1, d)
        return self.norm(h_hat_g + z)


@dataclass
class InteractionState:
    """Label-enhanced and existence-aware matrices for one instance."""

    h_s: Tensor  # (c, d)
    h_e: Tensor  # (c, d)
    h_hat_g: Tensor  # (1, d)
    h_tilde_s: Tensor  # (c, d)
    h_tilde_e: Tensor  # (c, d)
    h_tilde_g: Tensor  # (1, d)


class ExistenceInteraction(nn.Module):
    """Full label-attention + existence-aware block."""

    def __init__(self, dim: int, num_heads: int = 8, update_source: str = "start_end"):
        super().__init__()
        self.labels = LabelTable(dim)
        self.start_attend = LabelAttention(dim, num_heads)
        self.end_attend = LabelAttention(dim, num_heads)
        self.exist_attend = LabelAttention(dim, num_heads)
        self.start_aware = ExistenceAware(dim, num_heads)
        self.end_aware = ExistenceAware(dim, num_heads)
        self.update = ExistenceUpdate(dim, num_heads, update_source)

    def forward(self, h_u: Tensor, h_g: Tensor) -> InteractionState:
        h_s = self.start_attend(h_u, self.labels.rows("start"))
        h_e = self.end_attend(h_u, self.labels.rows("end"))
        h_hat_g = self.exist_attend(h_g, self.labels.rows("exist"))
        h_tilde_s = self.start_aware(h_s, h_hat_g)
        h_tilde_e = self.end_aware(h_e, h_hat_g)
        h_tilde_g = self.update(h_hat_g, h_s, h_e, h_u)
        return InteractionState(
            h_s=h_s,
            h_e=h_e,
            h_hat_g=h_hat_g,
            h_tilde_s=h_tilde_s,
            h_tilde_e=h_tilde_e,
            h_tilde_g=h_tilde_g,
        )
