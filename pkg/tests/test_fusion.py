"""Cross-modal fusion: query summary, per-scale visual attention, FFN mix."""

from __future__ import annotations

import pytest
import torch

from helpers import fd_gradient_check
from spanground.encoders import PyramidGeometry, TextEncoding, VisualPyramid
from spanground.fusion import CrossModalFusion, FusedState

torch.manual_seed(0)


def _rand(*shape):
    return torch.randn(*shape, dtype=torch.float64)


def _fusion(dim, num_scales=3, num_heads=8, share_scales=False):
    return CrossModalFusion(dim, num_scales, num_heads, share_scales).double()


def _pyramid(dim, grids=(8, 16, 32), fill=None):
    geometry = PyramidGeometry(grids=grids)
    levels = tuple(
        _rand(g * g, dim) if fill is None else fill.expand(g * g, dim).clone()
        for g in grids
    )
    return VisualPyramid(levels=levels, geometry=geometry)


def _encoding(m, n, dim):
    # Layout [CLS] q_1..q_m [SEP] t_1..t_n [SEP]: c = m + n + 3 rows.
    c = m + n + 3
    h_prime = _rand(c, dim)
    query_positions = tuple(range(1, m + 1))
    alignment = tuple((m + 2 + i, m + 2 + i) for i in range(n))
    return TextEncoding(h_prime=h_prime, query_positions=query_positions, token_alignment=alignment)


def test_summarize_query_singleton_is_identity():
    fusion = _fusion(6, num_heads=2)
    row = _rand(1, 6)
    q, weights = fusion.summarize_query(row)
    assert q.shape == (1, 6)
    assert torch.allclose(q, row, atol=1e-12)
    assert torch.allclose(weights, torch.ones(1, dtype=torch.float64), atol=1e-12)


def test_summarize_query_uniform_when_scorer_is_constant():
    fusion = _fusion(6, num_heads=2)
    with torch.no_grad():
        fusion.query_summary.scorer[2].weight.zero_()
        fusion.query_summary.scorer[2].bias.zero_()
    rows = _rand(4, 6)
    q, weights = fusion.summarize_query(rows)
    assert torch.allclose(weights, torch.full((4,), 0.25, dtype=torch.float64), atol=1e-12)
    assert torch.allclose(q, rows.mean(dim=0, keepdim=True), atol=1e-12)


def test_summarize_query_matches_direct_recomputation():
    fusion = _fusion(4, num_heads=2)
    rows = _rand(3, 4)
    q, weights = fusion.summarize_query(rows)
    scores = fusion.query_summary.scorer(rows).squeeze(-1)
    expected_weights = torch.softmax(scores, dim=0)
    assert torch.allclose(weights, expected_weights, atol=1e-12)
    assert torch.allclose(q, expected_weights.unsqueeze(0) @ rows, atol=1e-12)


def test_summarize_query_rejects_empty():
    fusion = _fusion(4, num_heads=2)
    with pytest.raises(ValueError, match="empty"):
        fusion.summarize_query(torch.zeros(0, 4, dtype=torch.float64))


def test_fuse_constant_pyramid_with_identity_values():
    # Every pyramid row equals v and the value projections are identity:
    # each per-scale attention output row is v, so the mean is too, and the
    # fused output reduces to FFN([v ; H']).
    dim = 8
    fusion = _fusion(dim, num_heads=2)
    v = _rand(1, dim)
    pyramid = _pyramid(dim, fill=v)
    with torch.no_grad():
        for attn in fusion.scale_attentions:
            attn.v_proj.weight.copy_(torch.eye(dim, dtype=torch.float64))
    h_prime = _rand(5, dim)
    fused = fusion.cross_modal_fuse(h_prime, pyramid)
    expected = fusion.ffn(torch.cat([v.expand(5, dim), h_prime], dim=1))
    assert torch.allclose(fused, expected, atol=1e-10)


def test_fuse_matches_dense_recomputation_single_head():
    dim = 4
    fusion = _fusion(dim, num_scales=2, num_heads=1)
    geometry = PyramidGeometry(grids=(2, 4), frame_size=256.0)
    levels = (_rand(4, dim), _rand(16, dim))
    pyramid = VisualPyramid(levels=levels, geometry=geometry)
    h_prime = _rand(5, dim)

    per_scale = []
    for attn, level in zip(fusion.scale_attentions, pyramid.levels):
        q = h_prime @ attn.q_proj.weight.T
        k = level @ attn.k_proj.weight.T
        v = level @ attn.v_proj.weight.T
        weights = torch.softmax(q @ k.T / dim ** 0.5, dim=-1)
        per_scale.append(weights @ v)
    h_a = torch.stack(per_scale).mean(dim=0)
    mixed = torch.cat([h_a, h_prime], dim=1)
    hidden = torch.relu(mixed @ fusion.ffn[0].weight.T + fusion.ffn[0].bias)
    expected = hidden @ fusion.ffn[2].weight.T + fusion.ffn[2].bias

    fused = fusion.cross_modal_fuse(h_prime, pyramid)
    assert torch.allclose(fused, expected, atol=1e-10)


def test_fuse_output_shape_at_reference_width():
    dim = 512
    fusion = _fusion(dim)
    fused = fusion.cross_modal_fuse(_rand(33, dim), _pyramid(dim))
    assert fused.shape == (33, dim)


def test_fuse_rejects_wrong_level_count():
    fusion = _fusion(4, num_scales=3, num_heads=2)
    single = VisualPyramid(levels=(_rand(64, 4),), geometry=PyramidGeometry(grids=(8,)))
    with pytest.raises(ValueError, match="expects 3"):
        fusion.cross_modal_fuse(_rand(5, 4), single)


def test_fuse_invariant_to_pyramid_row_order():
    dim = 8
    fusion = _fusion(dim, num_heads=2)
    pyramid = _pyramid(dim)
    h_prime = _rand(6, dim)
    fused = fusion.cross_modal_fuse(h_prime, pyramid)

    generator = torch.Generator().manual_seed(3)
    shuffled_levels = tuple(
        level[torch.randperm(level.shape[0], generator=generator)]
        for level in pyramid.levels
    )
    shuffled = VisualPyramid(levels=shuffled_levels, geometry=pyramid.geometry)
    assert torch.allclose(fused, fusion.cross_modal_fuse(h_prime, shuffled), atol=1e-6)


def test_share_scales_reuses_one_attention():
    shared = _fusion(8, num_heads=2, share_scales=True)
    assert len(set(id(m) for m in shared.scale_attentions)) == 1

    unshared = _fusion(8, num_heads=2, share_scales=False)
    assert len(set(id(m) for m in unshared.scale_attentions)) == 3
    params_shared = sum(p.numel() for p in shared.parameters())
    params_unshared = sum(p.numel() for p in unshared.parameters())
    assert params_unshared > params_shared


def test_forward_returns_consistent_state():
    dim = 8
    fusion = _fusion(dim, num_heads=2)
    encoding = _encoding(m=3, n=4, dim=dim)
    pyramid = _pyramid(dim)
    state = fusion(encoding, pyramid)

    assert isinstance(state, FusedState)
    c = encoding.h_prime.shape[0]
    assert state.q.shape == (1, dim)
    assert state.h_u.shape == (c, dim)
    assert state.h_g.shape == (1, dim)
    assert state.query_weights.shape == (3,)
    assert state.existence_weights.shape == (c,)
    assert torch.allclose(state.query_weights.sum(), torch.tensor(1.0, dtype=torch.float64))
    assert torch.allclose(state.existence_weights.sum(), torch.tensor(1.0, dtype=torch.float64))

    # Summaries are convex combinations of their input rows.
    query_rows = encoding.query_matrix()
    assert (state.q >= query_rows.min(dim=0).values - 1e-12).all()
    assert (state.q <= query_rows.max(dim=0).values + 1e-12).all()
    assert torch.allclose(state.q, state.query_weights.unsqueeze(0) @ query_rows, atol=1e-12)


def test_fusion_gradients_match_finite_differences():
    dim = 8
    fusion = _fusion(dim, num_scales=2, num_heads=2)
    geometry = PyramidGeometry(grids=(2, 2), frame_size=256.0)
    h_prime = _rand(6, dim).requires_grad_(True)
    level_a = _rand(4, dim).requires_grad_(True)
    level_b = _rand(4, dim).requires_grad_(True)

    def loss_fn():
        pyramid = VisualPyramid(levels=(level_a, level_b), geometry=geometry)
        fused = fusion.cross_modal_fuse(h_prime, pyramid)
        q, _ = fusion.summarize_query(h_prime[1:4])
        h_g, _ = fusion.summarize_existence(h_prime)
        return (fused ** 2).mean() + (q ** 2).mean() + (h_g ** 2).mean()

    params = list(fusion.parameters()) + [h_prime, level_a, level_b]
    checked = fd_gradient_check(params, loss_fn, max_entries=3)
    assert checked >= 30
