"""Scaled dot-product multi-head attention over unbatched 2-D matrices."""

from __future__ import annotations

import math
from typing import Optional, Tuple

import torch
from torch import Tensor, nn


class MultiHeadAttention(nn.Module):
    """Per-head Q/K/V projections, softmax over keys, heads concatenated.

    The output is the plain concatenation of head outputs; layers that need
    an extra output projection apply their own.  Scaling is 1/sqrt(d/h) per
    head.  Operates on (rows, dim) matrices, one instance at a time.
    """

    def __init__(self, dim: int, num_heads: int = 8, bias: bool = False, out_proj: bool = False):
        super().__init__()
        if dim % num_heads != 0:
            raise ValueError(f"head count {num_heads} must divide dim {dim}")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim, bias=bias)
        self.k_proj = nn.Linear(dim, dim, bias=bias)
        self.v_proj = nn.Linear(dim, dim, bias=bias)
        self.out_proj = nn.Linear(dim, dim, bias=bias) if out_proj else None

    def forward(
        self, query: Tensor, keys: Tensor, return_weights: bool = False
    ) -> Tensor | Tuple[Tensor, Tensor]:
        a, d = query.shape
        b = keys.shape[0]
        h, dh = self.num_heads, self.head_dim

        q = self.q_proj(query).view(a, h, dh).transpose(0, 1)  # (h, a, dh)
        k = self.k_proj(keys).view(b, h, dh).transpose(0, 1)  # (h, b, dh)
        v = self.v_proj(keys).view(b, h, dh).transpose(0, 1)  # (h, b, dh)

        scores = q @ k.transpose(1, 2) / math.sqrt(dh)  # (h, a, b)
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(0, 1).reshape(a, d)  # (a, d)
        if self.out_proj is not None:
            out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class SummaryAttention(nn.Module):
    """Collapse a (rows, dim) matrix to one row via softmax-scored pooling.

    A small MLP scores every row; the softmax of the scores weights a row
    sum.  Weights are returned for inspection.
    """

    def __init__(self, dim: int):
        super().__init__()
        hidden = max(1, dim // 2)
        self.scorer = nn.Sequential(nn.Linear(dim, hidden), nn.Tanh(), nn.Linear(hidden, 1))

    def forward(self, rows: Tensor) -> Tuple[Tensor, Tensor]:
        if rows.shape[0] == 0:
            raise ValueError("cannot summarize an empty matrix")
        scores = self.scorer(rows).squeeze(-1)  # (rows,)
        weights = torch.softmax(scores, dim=0)
        summary = (weights.unsqueeze(0) @ rows)  # (1, dim)
        return summary, weights
