"""Shared test utilities: central finite-difference gradient checking."""

from __future__ import annotations

import random
from typing import Callable, Sequence

import torch
from torch import Tensor


def fd_gradient_check(
    params: Sequence[Tensor],
    loss_fn: Callable[[], Tensor],
    eps: float = 1e-6,
    rtol: float = 1e-4,
    max_entries: int = 4,
    seed: int = 0,
) -> int:
    """Compare autograd gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward pass on every call so that in-place
    parameter perturbations are observed. Up to ``max_entries`` coordinates
    per tensor are probed. Returns the number of coordinates checked.
    All tensors must be float64.
    """
    rng = random.Random(seed)
    loss = loss_fn()
    assert loss.dtype == torch.float64, "gradient checks require float64"
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    checked = 0
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        n = flat.numel()
        indices = list(range(n)) if n <= max_entries else rng.sample(range(n), max_entries)
        for i in indices:
            original = flat[i].item()
            flat[i] = original + eps
            plus = float(loss_fn().detach())
            flat[i] = original - eps
            minus = float(loss_fn().detach())
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            analytic = 0.0 if g is None else float(g.reshape(-1)[i])
            denom = max(abs(numeric), abs(analytic), 1e-4)
            rel = abs(numeric - analytic) / denom
            assert rel < rtol, (
                f"gradient mismatch at parameter entry {i}: "
                f"analytic={analytic:.10g} numeric={numeric:.10g} rel={rel:.3g}"
            )
            checked += 1
    return checked
