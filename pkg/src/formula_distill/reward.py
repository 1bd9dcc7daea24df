"""Coefficient of determination and its 101-level quantization.

Reward tokens are the two-decimal strings "0.00".."1.00".  Quantization
rounds half away from zero at the second decimal and clamps into [0, 1];
anything non-finite (including the DomainViolation sentinel) maps to
level 0.  Rounding goes through the shortest-repr decimal of the float
so that values written as two-decimal literals always land on their own
level and golden files stay bit-stable.
"""

from __future__ import annotations

import math
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import DegenerateTarget, InvalidTokenKind
from .vocab import REWARD_TOKENS

#: quantize-input sentinel for "evaluation failed"; maps to level 0
DOMAIN_VIOLATION_R2 = float("-inf")

_TOKEN_LEVEL = {tok: level for level, tok in enumerate(REWARD_TOKENS)}


def r_squared(y, y_hat) -> float:
    """1 - ss_res/ss_tot over matched samples.

    Unbounded below; exactly 1.0 for a perfect fit.  A constant target
    makes the ratio undefined and raises DegenerateTarget.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValueError(f"mismatched shapes: {y.shape} vs {y_hat.shape}")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTarget("target values are all identical")
    ss_res = float(np.sum((y - y_hat) ** 2))
    return 1.0 - ss_res / ss_tot


def quantize(r2: float) -> int:
    """Reward level 0..100 for a raw R^2 (or the failure sentinel)."""
    r2 = float(r2)
    if not math.isfinite(r2) or r2 <= 0.0:
        return 0
    if r2 >= 1.0:
        return 100
    scaled = (Decimal(repr(r2)) * 100).to_integral_value(rounding=ROUND_HALF_UP)
    return min(100, max(0, int(scaled)))


def level_token(level: int) -> str:
    """Canonical two-decimal token for a level ("0.63" for 63)."""
    if not 0 <= level <= 100:
        raise InvalidTokenKind(f"reward level out of range: {level}")
    return REWARD_TOKENS[level]


def token_level(tok: str) -> int:
    """Inverse of level_token; only canonical spellings are accepted."""
    try:
        return _TOKEN_LEVEL[tok]
    except KeyError:
        raise InvalidTokenKind(f"not a reward token: {tok!r}") from None


def quantized_token(r2: float) -> str:
    return REWARD_TOKENS[quantize(r2)]
