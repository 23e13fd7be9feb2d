import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from hbsae.summaries import (InsufficientDrawsError, coefficient_of_variation,
                             equal_tail, hpd, mean_variance, summarize)


class TestMeanVariance:
    def test_divisor_h(self):
        m, v = mean_variance([0.1, 0.2, 0.3])
        assert_allclose(m, 0.2, rtol=1e-15)
        assert_allclose(v, 0.02 / 3, rtol=1e-12)

    def test_constant(self):
        assert mean_variance(np.full(7, 0.4))[1] == 0.0

    def test_zero_one(self):
        assert mean_variance([0.0, 1.0]) == (0.5, 0.25)

    def test_needs_two(self):
        with pytest.raises(InsufficientDrawsError):
            mean_variance([1.0])


class TestEqualTail:
    def test_ranks(self):
        assert equal_tail(np.arange(1.0, 101.0), 0.95) == (3.0, 98.0)

    def test_narrow_level(self):
        assert equal_tail(np.arange(1.0, 101.0)[::-1], 0.02) == (49.0, 51.0)

    def test_constant(self):
        assert equal_tail(np.full(50, 2.5)) == (2.5, 2.5)

    def test_too_few(self):
        with pytest.raises(InsufficientDrawsError):
            equal_tail(np.arange(39.0), 0.95)
        equal_tail(np.arange(40.0), 0.95)


class TestHPD:
    def test_shortest_window(self):
        assert hpd([0.0, 0.0, 0.0, 1.0, 10.0], 0.6) == (0.0, 1.0)

    def test_tie_break(self):
        assert hpd(np.arange(10.0)[::-1], 0.8) == (0.0, 8.0)

    def test_skewed_narrower(self):
        d = np.random.default_rng(0).lognormal(0, 1, 5000)
        lo, hi = hpd(d)
        elo, ehi = equal_tail(d)
        assert hi - lo < ehi - elo

    def test_vectorized(self):
        d = np.random.default_rng(1).normal(size=(3, 4, 200))
        lo, hi = hpd(d)
        assert lo.shape == (3, 4)
        assert hpd(d[2, 1]) == (lo[2, 1], hi[2, 1])


class TestCV:
    def test_value(self):
        assert_allclose(coefficient_of_variation(0.2, 0.0016), 0.2, rtol=1e-12)

    def test_zero_variance(self):
        assert coefficient_of_variation(0.3, 0.0) == 0.0

    def test_zero_mean_undefined(self):
        assert math.isnan(coefficient_of_variation(0.0, 0.01))
        s = summarize(np.zeros(100))
        assert not s.cv_defined


draw_sets = st.integers(40, 400).flatmap(
    lambda H: st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=H, max_size=H))


@settings(max_examples=200, deadline=None)
@given(draws=draw_sets, level=st.sampled_from([0.5, 0.8, 0.9, 0.95]))
def test_interval_properties(draws, level):
    d = np.asarray(draws)
    H = d.size
    if H * (1 - level) / 2 < 1:
        return
    elo, ehi = equal_tail(d, level)
    lo, hi = hpd(d, level)
    assert elo <= ehi and lo <= hi
    assert hi - lo <= ehi - elo
    med = np.median(d)
    assert elo <= med <= ehi and lo <= med <= hi
    assert np.mean((d >= elo) & (d <= ehi)) >= level - 2 / H
