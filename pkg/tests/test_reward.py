"""Reward computation and quantization tests.

Frozen values are hand-derived: for y=[0,1,2], y_hat=[2,1,0] the mean is
1, ss_tot = 1+0+1 = 2, ss_res = 4+0+4 = 8, so R^2 = 1 - 8/2 = -3.
"""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from formula_distill import reward as rw
from formula_distill.errors import DegenerateTarget
from formula_distill.vocab import REWARD_TOKENS


def test_r_squared_perfect():
    y = np.array([1.0, 2.0, 4.5])
    assert rw.r_squared(y, y.copy()) == 1.0


def test_r_squared_mean_predictor_is_zero():
    y = np.array([1.0, 2.0, 3.0])
    got = rw.r_squared(y, np.full(3, 2.0))
    assert abs(got) < 1e-15


def test_r_squared_frozen_negative():
    got = rw.r_squared([0.0, 1.0, 2.0], [2.0, 1.0, 0.0])
    assert got == pytest.approx(-3.0, abs=1e-12)
    # cross-check with a brute-force loop
    y, yh = [0.0, 1.0, 2.0], [2.0, 1.0, 0.0]
    mean = sum(y) / 3
    brute = 1 - sum((a - b) ** 2 for a, b in zip(y, yh)) / sum((a - mean) ** 2 for a in y)
    assert got == pytest.approx(brute, abs=1e-12)


def test_r_squared_degenerate():
    with pytest.raises(DegenerateTarget):
        rw.r_squared([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_quantize_examples():
    assert rw.quantize(0.634) == 63
    assert rw.quantize(0.995) == 100  # half away from zero at the second decimal
    assert rw.quantize(0.005) == 1
    assert rw.quantize(-0.2) == 0
    assert rw.quantize(0.0) == 0
    assert rw.quantize(1.0) == 100
    assert rw.quantize(17.3) == 100  # clamp above
    assert rw.quantize(rw.DOMAIN_VIOLATION_R2) == 0
    assert rw.quantize(float("nan")) == 0


def test_quantize_exhaustive_levels():
    for level in range(101):
        assert rw.quantize(level / 100) == level
        assert rw.level_token(level) == REWARD_TOKENS[level]
        assert rw.token_level(rw.level_token(level)) == level


def test_quantize_round_half_away():
    # midpoints go up for positive values
    assert rw.quantize(0.125) == 13
    assert rw.quantize(0.875) == 88
    assert rw.quantize(0.004999) == 0


@given(st.floats(min_value=-2.0, max_value=2.0, allow_nan=False))
def test_quantize_bounds(x):
    level = rw.quantize(x)
    assert 0 <= level <= 100


def test_quantize_monotone_grid():
    grid = np.linspace(-0.5, 1.5, 20001)
    levels = [rw.quantize(v) for v in grid]
    assert all(a <= b for a, b in zip(levels, levels[1:]))


def test_reward_tokens_render_two_decimals():
    for level in range(101):
        tok = rw.level_token(level)
        assert len(tok.split(".")[1]) == 2
        assert round(float(tok) * 100) == level


def test_token_level_rejects_non_reward():
    for tok in ("0.5", "1.000", "x1", "<bos>", "0.101"):
        with pytest.raises(Exception):
            rw.token_level(tok)
