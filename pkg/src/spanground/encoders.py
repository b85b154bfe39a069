"""Text and image encoders: projected token matrix and three-scale pyramid.

Two backends share one interface: a small randomly initialized reference
backend that runs fast on CPU (used throughout the tests), and an adapter
contract for plugging in pretrained backbones.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import List, Protocol, Sequence, Tuple, runtime_checkable

import torch
from torch import Tensor, nn

from .attention import MultiHeadAttention
from .core import FRAME_SIZE


@dataclass(frozen=True)
class PyramidGeometry:
    """Grid sizes of the feature pyramid inside the resized image frame."""

    grids: Tuple[int, ...] = (8, 16, 32)
    frame_size: float = FRAME_SIZE

    def __post_init__(self) -> None:
        if not self.grids:
            raise ValueError("pyramid needs at least one grid")
        for g in self.grids:
            if g <= 0 or self.frame_size % g != 0:
                raise ValueError(f"grid size {g} must divide the frame size {self.frame_size}")

    @property
    def strides(self) -> Tuple[float, ...]:
        return tuple(self.frame_size / g for g in self.grids)

    @property
    def num_locations(self) -> int:
        return sum(g * g for g in self.grids)


DEFAULT_GEOMETRY = PyramidGeometry()

# Raw channel counts the pretrained visual contract exposes, coarsest first.
PRETRAINED_CHANNELS: Tuple[int, int, int] = (1024, 512, 256)


@dataclass
class TextEncoding:
    """Projected token matrix plus the bookkeeping to address its rows.

    ``h_prime`` has one row per encoder position; ``query_positions`` are
    the rows of the query tokens and ``token_alignment`` maps each sentence
    token to its inclusive (first, last) row range.
    """

    h_prime: Tensor  # (c, d)
    query_positions: Tuple[int, ...]
    token_alignment: Tuple[Tuple[int, int], ...]

    @property
    def length(self) -> int:
        return self.h_prime.shape[0]

    def sentence_mask(self) -> Tensor:
        """Boolean (c,) mask of positions belonging to sentence tokens."""
        mask = torch.zeros(self.length, dtype=torch.bool)
        for lo, hi in self.token_alignment:
            mask[lo : hi + 1] = True
        return mask

    def query_matrix(self) -> Tensor:
        return self.h_prime[list(self.query_positions)]


@dataclass
class VisualPyramid:
    """Flattened, projected feature maps, one matrix per scale (coarsest first)."""

    levels: Tuple[Tensor, ...]  # ((g*g, d), ...) row-major
    geometry: PyramidGeometry = DEFAULT_GEOMETRY

    def __post_init__(self) -> None:
        self.levels = tuple(self.levels)
        if len(self.levels) != len(self.geometry.grids):
            raise ValueError(
                f"{len(self.levels)} levels for {len(self.geometry.grids)} grids"
            )
        for level, g in zip(self.levels, self.geometry.grids):
            if level.shape[0] != g * g:
                raise ValueError(f"level has {level.shape[0]} rows, expected {g * g}")

    @property
    def dim(self) -> int:
        return self.levels[0].shape[1]

    def grid(self, index: int) -> Tensor:
        """Unflatten level ``index`` back to (g, g, d)."""
        g = self.geometry.grids[index]
        return self.levels[index].view(g, g, self.dim)


def flatten_grid(grid: Tensor) -> Tensor:
    """Row-major (g, g, d) -> (g*g, d)."""
    g1, g2, d = grid.shape
    return grid.reshape(g1 * g2, d)


class OverlongInputError(ValueError):
    """Raised instead of silently truncating sentence tokens."""


@runtime_checkable
class TextBackbone(Protocol):
    """Contract for contextual text backbones.

    ``encode`` consumes the query/sentence token pair (the backbone owns
    tokenization into its own subwords and special markers) and returns the
    contextual matrix of shape (c, hidden_size) with c = m + n + 3, the row
    indices of the query tokens, and per-sentence-token inclusive row
    ranges (first and last subword).
    """

    hidden_size: int

    def encode(
        self, query_tokens: Sequence[str], sentence_tokens: Sequence[str]
    ) -> Tuple[Tensor, Tuple[int, ...], Tuple[Tuple[int, int], ...]]: ...


@runtime_checkable
class VisualBackbone(Protocol):
    """Contract for visual backbones: raw maps per pyramid scale, coarsest first.

    ``extract`` takes a (3, S, S) image in the resized frame and returns one
    (channels[i], g_i, g_i) map per geometry grid.
    """

    channels: Tuple[int, ...]
    geometry: PyramidGeometry

    def extract(self, image: Tensor) -> List[Tensor]: ...


def _hash_token(token: str, vocab_size: int, reserved: int) -> int:
    return reserved + zlib.crc32(token.encode("utf-8")) % (vocab_size - reserved)


class _EncoderBlock(nn.Module):
    """Post-norm transformer block: self-attention then feed-forward."""

    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.attn = MultiHeadAttention(dim, num_heads, bias=False, out_proj=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, 2 * dim), nn.ReLU(), nn.Linear(2 * dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x, x))
        x = self.norm2(x + self.ffn(x))
        return x


class ReferenceTextBackbone(nn.Module):
    """Small trainable transformer over hashed token ids.

    Tokens map to embedding rows through a stable hash, so the encoding is
    identical across processes without a fitted vocabulary.
    """

    CLS_ID = 0
    SEP_ID = 1
    _RESERVED = 2

    def __init__(
        self,
        hidden_size: int = 64,
        vocab_size: int = 1024,
        max_positions: int = 128,
        num_layers: int = 2,
        num_heads: int = 4,
    ):
        super().__init__()
        self.hidden_size = hidden_size
        self.vocab_size = vocab_size
        self.max_positions = max_positions
        self.token_embedding = nn.Embedding(vocab_size, hidden_size)
        self.position_embedding = nn.Embedding(max_positions, hidden_size)
        self.blocks = nn.ModuleList(_EncoderBlock(hidden_size, num_heads) for _ in range(num_layers))

    def token_ids(self, query_tokens: Sequence[str], sentence_tokens: Sequence[str]) -> List[int]:
        ids = [self.CLS_ID]
        ids += [_hash_token(t, self.vocab_size, self._RESERVED) for t in query_tokens]
        ids.append(self.SEP_ID)
        ids += [_hash_token(t, self.vocab_size, self._RESERVED) for t in sentence_tokens]
        ids.append(self.SEP_ID)
        return ids

    def encode(
        self, query_tokens: Sequence[str], sentence_tokens: Sequence[str]
    ) -> Tuple[Tensor, Tuple[int, ...], Tuple[Tuple[int, int], ...]]:
        if not query_tokens or not sentence_tokens:
            raise ValueError("query and sentence must both be nonempty")
        m, n = len(query_tokens), len(sentence_tokens)
        c = m + n + 3
        if c > self.max_positions:
            raise OverlongInputError(
                f"encoder input length {c} exceeds the limit {self.max_positions}; "
                f"refusing to truncate"
            )
        ids = torch.tensor(self.token_ids(query_tokens, sentence_tokens), dtype=torch.long)
        positions = torch.arange(c, dtype=torch.long)
        x = self.token_embedding(ids) + self.position_embedding(positions)  # (c, d_c)
        for block in self.blocks:
            x = block(x)
        query_positions = tuple(range(1, m + 1))
        alignment = tuple((m + 2 + i, m + 2 + i) for i in range(n))
        return x, query_positions, alignment


class ReferenceVisualBackbone(nn.Module):
    """Three-stage strided conv stack over the resized image.

    Produces raw maps at the standard 32x32 / 16x16 / 8x8 grids (returned
    coarsest first to match the pyramid order).  Two fixed coordinate planes
    are appended to the input so cells inside uniform regions stay spatially
    distinguishable despite the small receptive fields, and a global context
    vector (mean- and max-pooled stem features) is added back to every cell
    so local features can be compared against whole-image statistics; the max
    branch lets position-gated stem units expose extremal coordinates.
    """

    def __init__(self, channels: Tuple[int, int, int] = (48, 32, 24)):
        super().__init__()
        self.channels = channels
        self.geometry = DEFAULT_GEOMETRY
        c1, c2, c3 = channels  # coarsest (8x8) .. finest (32x32)
        self.stem = nn.Conv2d(5, c3, kernel_size=8, stride=8)  # 256 -> 32
        self.down1 = nn.Conv2d(c3, c2, kernel_size=3, stride=2, padding=1)  # 32 -> 16
        self.down2 = nn.Conv2d(c2, c1, kernel_size=3, stride=2, padding=1)  # 16 -> 8
        # Bias-free so an all-zero map contributes no context.
        self.context = nn.Linear(2 * c3, c3, bias=False)
        self.act = nn.ReLU()
        size = int(self.geometry.frame_size)
        axis = torch.linspace(0.0, 1.0, size, dtype=torch.float64)
        coords = torch.stack(
            (axis.reshape(1, -1).expand(size, size), axis.reshape(-1, 1).expand(size, size))
        )
        self.register_buffer("coords", coords)  # (2, size, size): x plane, y plane

    def extract(self, image: Tensor) -> List[Tensor]:
        x = torch.cat([image, self.coords.to(image.dtype)], dim=0)
        f3 = self.act(self.stem(x.unsqueeze(0)))
        pooled = torch.cat([f3.mean(dim=(2, 3)), f3.amax(dim=(2, 3))], dim=1)  # (1, 2*c3)
        f3 = f3 + self.context(pooled).reshape(1, -1, 1, 1)
        f2 = self.act(self.down1(f3))
        f1 = self.act(self.down2(f2))
        return [f1.squeeze(0), f2.squeeze(0), f3.squeeze(0)]

    forward = extract


class TextEncoder(nn.Module):
    """Backbone plus the linear projection onto the shared width d."""

    def __init__(
        self, backbone: TextBackbone, dim: int = 512, dropout: float = 0.3, finetune: bool = True
    ):
        super().__init__()
        self.backbone = backbone
        self.dim = dim
        # Bias-free so the projection is linear, not affine.
        self.project = nn.Linear(backbone.hidden_size, dim, bias=False)
        self.dropout = nn.Dropout(dropout)
        if not finetune and isinstance(backbone, nn.Module):
            for p in backbone.parameters():
                p.requires_grad_(False)

    def encode(self, query_tokens: Sequence[str], sentence_tokens: Sequence[str]) -> TextEncoding:
        h, query_positions, alignment = self.backbone.encode(query_tokens, sentence_tokens)
        h_prime = self.dropout(self.project(h))  # (c, d)
        return TextEncoding(h_prime, query_positions, alignment)

    forward = encode


class ImageEncoder(nn.Module):
    """Backbone plus per-scale 1x1 conv + batch norm + ReLU onto width d."""

    def __init__(self, backbone: VisualBackbone, dim: int = 512, dropout: float = 0.3):
        super().__init__()
        self.backbone = backbone
        self.dim = dim
        self.geometry = backbone.geometry
        self.projections = nn.ModuleList(
            nn.Sequential(nn.Conv2d(ch, dim, kernel_size=1), nn.BatchNorm2d(dim), nn.ReLU())
            for ch in backbone.channels
        )
        self.dropout = nn.Dropout(dropout)

    def encode(self, image: Tensor) -> VisualPyramid:
        size = int(self.geometry.frame_size)
        if image.shape != (3, size, size):
            raise ValueError(f"expected a (3, {size}, {size}) image, got {tuple(image.shape)}")
        raw_maps = self.backbone.extract(image)
        levels = []
        for raw, proj, g in zip(raw_maps, self.projections, self.geometry.grids):
            if raw.shape[1:] != (g, g):
                raise ValueError(f"backbone map is {tuple(raw.shape[1:])}, expected ({g}, {g})")
            mapped = self.dropout(proj(raw.unsqueeze(0)).squeeze(0))  # (d, g, g)
            levels.append(flatten_grid(mapped.permute(1, 2, 0)))  # (g*g, d)
        return VisualPyramid(tuple(levels), self.geometry)

    forward = encode


def build_reference_encoders(
    dim: int = 64,
    dropout: float = 0.3,
    text_hidden: int = 64,
    text_layers: int = 2,
    text_heads: int = 4,
    visual_channels: Tuple[int, int, int] = (48, 32, 24),
    vocab_size: int = 1024,
    max_positions: int = 128,
    finetune_text: bool = True,
) -> Tuple[TextEncoder, ImageEncoder]:
    """Reference encoder pair used by tests and CPU-scale runs."""
    text = TextEncoder(
        ReferenceTextBackbone(
            hidden_size=text_hidden,
            vocab_size=vocab_size,
            max_positions=max_positions,
            num_layers=text_layers,
            num_heads=text_heads,
        ),
        dim=dim,
        dropout=dropout,
        finetune=finetune_text,
    )
    image = ImageEncoder(ReferenceVisualBackbone(visual_channels), dim=dim, dropout=dropout)
    return text, image


def build_pretrained_encoders(
    text_backbone: TextBackbone | None,
    visual_backbone: VisualBackbone | None,
    dim: int = 512,
    dropout: float = 0.3,
) -> Tuple[TextEncoder, ImageEncoder]:
    """Wrap user-supplied pretrained adapters; both adapters are required."""
    if text_backbone is None or visual_backbone is None:
        raise ValueError(
            "the pretrained backend needs adapter objects implementing TextBackbone "
            "and VisualBackbone; pass them explicitly (no checkpoints ship with this package)"
        )
    return TextEncoder(text_backbone, dim, dropout), ImageEncoder(visual_backbone, dim, dropout)
