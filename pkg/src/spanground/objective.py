"""Joint objective: dynamic task balancing and the weighted total loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import torch
from torch import Tensor

Scalar = Union[float, Tensor]

DEFAULT_LAMBDA1 = 1.0
DEFAULT_LAMBDA2 = 2.0

# Width of the snap band under each exact decade; log10 of an exact power
# of ten can land a hair below the integer on some platforms.
_DECADE_GUARD = 1e-12


def floor_log10(x: float) -> int:
    """floor(log10 x) with values just under an exact decade snapped up."""
    if not math.isfinite(x) or x <= 0:
        raise ValueError(f"floor_log10 needs a positive finite value, got {x}")
    e = math.floor(math.log10(x))
    upper = 10.0 ** (e + 1)
    if upper * (1.0 - _DECADE_GUARD) <= x <= upper:
        return e + 1
    return e


def balance_factor(a: float, b: float) -> float:
    """10 to the minus absolute decade gap between the two loss values."""
    return 10.0 ** (-abs(floor_log10(a) - floor_log10(b)))


@dataclass
class BalanceState:
    """Per-step balance factor with fallback on degenerate loss values.

    Nonpositive or non-finite inputs keep the last valid factor and bump
    the warning counter instead of crashing mid-training.
    """

    last_valid: float = 1.0
    warnings: int = 0

    def update(self, a: float, b: float) -> float:
        a, b = float(a), float(b)
        if math.isfinite(a) and math.isfinite(b) and a > 0 and b > 0:
            self.last_valid = balance_factor(a, b)
        else:
            self.warnings += 1
        return self.last_valid


@dataclass
class LossBundle:
    """Components of the joint loss for one step."""

    l_qg: Scalar
    l_ed: Scalar
    l_esp: Scalar
    omega_f: float = 1.0
    lambda1: float = DEFAULT_LAMBDA1
    lambda2: float = DEFAULT_LAMBDA2


def _check_finite(name: str, value: Scalar) -> None:
    v = float(value.detach()) if isinstance(value, Tensor) else float(value)
    if not math.isfinite(v):
        raise ValueError(f"loss component {name} is not finite: {v}")


def total_loss(bundle: LossBundle) -> Scalar:
    """omega_f * L_QG + lambda1 * L_ED + lambda2 * L_ESP.

    omega_f is a plain float, so no gradient flows through the decade
    computation.
    """
    _check_finite("l_qg", bundle.l_qg)
    _check_finite("l_ed", bundle.l_ed)
    _check_finite("l_esp", bundle.l_esp)
    return bundle.omega_f * bundle.l_qg + bundle.lambda1 * bundle.l_ed + bundle.lambda2 * bundle.l_esp
