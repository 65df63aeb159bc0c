import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twochoice.core import RandomSource
from twochoice.driftwalk import (WalkParams, bernstein_bound, crossing_closed_form,
                                 crossing_exact, hitting_bound, walk_simulate)

GRID_P = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3]


def test_bernstein_examples():
    assert bernstein_bound(5.0, 1.0, 0.0) == 1.0
    assert bernstein_bound(3.0, 4 / 3, 3.0) == pytest.approx(math.exp(-27 / 26))
    assert bernstein_bound(3.0, 4 / 3, 3.0) == pytest.approx(0.3540, abs=1e-4)
    with pytest.raises(ValueError):
        bernstein_bound(-1.0, 1.0, 1.0)


def test_bernstein_covers_coin_sums():
    gen = np.random.default_rng(0)
    sums = 2 * gen.binomial(100, 0.5, size=10**6) - 100
    for z in [5, 10, 15, 20, 25]:
        emp = np.mean(sums <= -z)
        # centred steps: variance 100, offsets bounded by 1
        assert emp <= bernstein_bound(100.0, 1.0, z)


def test_hitting_bound_value_and_preconditions():
    assert hitting_bound(WalkParams(p=0.1, m=560, r0=0, r1=10)) == pytest.approx(math.exp(-2))
    with pytest.raises(ValueError, match="below"):
        hitting_bound(WalkParams(p=0.1, m=100, r0=0, r1=10))
    with pytest.raises(ValueError, match="1/3"):
        hitting_bound(WalkParams(p=0.4, m=1000, r0=0, r1=1))


@pytest.mark.parametrize("kw", [dict(p=-0.1), dict(p=0.6, q=0.6), dict(p=0.1, a=0),
                                dict(p=0.1, r0=3, r1=3)])
def test_walk_params_validation(kw):
    with pytest.raises(ValueError):
        WalkParams(**kw)


def test_crossing_examples():
    assert crossing_exact(0.0, 0.2, 3) == 0.0
    assert crossing_exact(0.1, 0.2, 3) == pytest.approx(1 / 15, abs=1e-14)
    assert crossing_closed_form(0.1, 0.2, 3) == pytest.approx(1 / 15, abs=1e-14)
    with pytest.raises(ValueError):
        crossing_exact(0.2, 0.1, 3)


def test_crossing_below_power_bound_on_grid():
    violations = 0
    for p in GRID_P:
        for a in range(1, 11):
            h = crossing_exact(p, 2 * p, a)
            violations += h > (p / (2 * p)) ** a
            assert h == pytest.approx(crossing_closed_form(p, 2 * p, a), rel=1e-10)
    assert violations == 0


@given(p=st.floats(0.01, 0.45), r=st.floats(1.05, 3.0), a=st.integers(1, 30))
def test_crossing_monotonicity(p, r, a):
    q = min(p * r, 1 - p)
    if q <= p * 1.01:
        return
    h = crossing_exact(p, q, a)
    assert h <= (p / q) ** a * (1 + 1e-10)
    assert crossing_exact(p, q, a + 1) <= h * (1 + 1e-12)
    assert crossing_exact(p, min(q * 1.05, 1 - p), a) <= h * (1 + 1e-12)
    assert crossing_exact(p * 0.95, q, a) <= h * (1 + 1e-12)
    # only the embedded +-1 chain matters
    assert crossing_exact(p / 2, q / 2, a) == pytest.approx(h, rel=1e-10)


def test_near_symmetric_walk():
    assert crossing_exact(0.3, 0.3 + 1e-12, 5) == pytest.approx(1 / 6, rel=1e-6)


def test_crossing_monte_carlo():
    est = walk_simulate(WalkParams(p=0.1, q=0.2, a=3), RandomSource(1).generator, 10**6)
    se = math.sqrt((1 / 15) * (14 / 15) / 10**6)
    assert abs(est.frequency - 1 / 15) <= 3 * se
    zero = walk_simulate(WalkParams(p=0.0, q=0.2, a=3), RandomSource(1), 1000)
    assert zero.frequency == 0.0


def test_hitting_monte_carlo():
    wp = WalkParams(p=0.1, m=560, r0=0, r1=10)
    est = walk_simulate(wp, RandomSource(2), 10**5, mode="hitting")
    assert est.frequency <= hitting_bound(wp) + 3 * est.se
    with pytest.raises(ValueError):
        walk_simulate(wp, RandomSource(2), 10, mode="other")
    with pytest.raises(ValueError):
        walk_simulate(wp, RandomSource(2), 0)
