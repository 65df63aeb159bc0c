import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import gammainc

from twochoice import analytic as an
from twochoice.core import TailProfile


def oracle_tail(mu, i):
    # P(Po(mu) >= i) is the regularized lower incomplete gamma P(i, mu)
    return 1.0 if i == 0 else float(gammainc(i, mu))


# -- Poisson utilities -------------------------------------------------------------

def test_poisson_tail_examples():
    assert an.poisson_tail(1.0, 0) == 1.0
    assert an.poisson_tail(1.0, 1) == pytest.approx(1 - math.exp(-1), abs=1e-15)
    assert an.poisson_tail(2.0, 3) == pytest.approx(1 - 5 * math.exp(-2), abs=1e-15)
    assert an.poisson_tail(0.0, 1) == 0.0
    with pytest.raises(ValueError):
        an.poisson_tail(-1.0, 2)


@given(mu=st.floats(0.0, 200.0), i=st.integers(0, 400))
def test_poisson_tail_matches_incomplete_gamma(mu, i):
    assert abs(an.poisson_tail(mu, i) - oracle_tail(mu, i)) <= 1e-12


@given(mu=st.floats(0.01, 50.0), i=st.integers(0, 80), dmu=st.floats(0.0, 5.0))
def test_poisson_tail_monotone(mu, i, dmu):
    assert an.poisson_tail(mu, i + 1) <= an.poisson_tail(mu, i)
    assert an.poisson_tail(mu + dmu, i) >= an.poisson_tail(mu, i) - 1e-15


@pytest.mark.parametrize("mu", [0.3, 1.0, 7.5, 40.0])
def test_poisson_tail_differences_sum_to_one(mu):
    t = an.poisson_tails(mu, int(mu + 40 * math.sqrt(mu) + 60))
    assert abs(np.sum(t[:-1] - t[1:]) - 1.0) <= 1e-12


def test_deviation_bound_on_grid():
    for mu in [1, 5, 20, 100, 500]:
        for eps in np.linspace(0.05, 1.0, 20):
            lo = math.ceil(mu * (1 + eps))
            hi = math.floor(mu * (1 - eps))
            p = an.poisson_tail(mu, lo) + (1 - an.poisson_tail(mu, hi + 1) if hi >= 0 else 0)
            assert p <= an.poisson_deviation_bound(mu, eps) + 1e-15


def test_power_bounds_on_grid():
    for mu in [0.1, 0.5, 1, 2, 5, 10]:
        for k in range(1, 40):
            first, second = an.poisson_power_bound(mu, k)
            tail = an.poisson_tail(mu, k)
            assert tail <= first * (1 + 1e-12)
            assert tail <= second * (1 + 1e-12)
    with pytest.raises(ValueError):
        an.poisson_power_bound(1.0, 0)


@given(mu=st.floats(0.01, 60.0), k=st.integers(1, 120))
def test_truncated_mean_identity(mu, k):
    assert abs(an.poisson_truncated_mean(mu, k) - mu * an.poisson_tail(mu, k - 1)) <= 1e-10


# -- one-choice levels -----------------------------------------------------------------

def scan_level(n, lam):
    w = 1 / math.log(math.log(n))
    i = 1
    while n * oracle_tail(lam, i + 1) > w:
        i += 1
    return i


@pytest.mark.parametrize("n", [16, 10**3, 10**5, 10**6, 10**9])
def test_one_choice_level_scan(n):
    pred = an.d1_levels(n, 1.0)
    assert pred.level == scan_level(n, 1.0)
    assert pred.support == (pred.level - 1, pred.level)


def test_one_choice_level_values():
    assert an.d1_levels(10**5).level == 8
    levels = [an.d1_levels(10.0**k).level for k in range(2, 13)]
    assert all(b >= a for a, b in zip(levels, levels[1:]))
    with pytest.raises(ValueError):
        an.d1_levels(10)


def test_one_choice_level_ratio_trend():
    """m(n) ln ln n / ln n drifts down towards 1; the two-term form is closer."""
    ns = [10.0**k for k in (4, 6, 8, 10, 12)]
    ratios = [an.d1_levels(n).level * math.log(math.log(n)) / math.log(n) for n in ns]
    assert ratios[-1] < ratios[0]
    assert all(r > 1 for r in ratios)
    for n in ns:
        m = an.d1_levels(n).level
        lead, two = an.d1_level_expansion(n)
        assert abs(two - m) < abs(lead - m)


def test_one_choice_max_bounds():
    b = an.d1_max_bounds(1000, 1.0, 6)
    assert b["ge_upper"] == pytest.approx(1000 * an.poisson_tail(1, 6))
    assert b["le_exact"] <= b["le_upper"]


# -- mean-field ODE -----------------------------------------------------------------

def test_ode_zero_time_returns_initial():
    init = TailProfile(np.array([1, 0.5, 0.2, 0.0]))
    sol = an.ode_solve(2, 1.0, init, t_end=0.0)
    assert np.allclose(sol.profiles[-1][:4], init.values)


@pytest.mark.parametrize("lam,t", [(1.0, 1.0), (2.5, 0.7), (0.3, 4.0)])
def test_one_choice_ode_is_poisson(lam, t):
    sol = an.ode_solve(1, lam, t_end=t)
    exact = np.array([oracle_tail(lam * (1 - math.exp(-t)), i) for i in range(sol.k_max + 1)])
    assert np.max(np.abs(sol.profiles[-1] - exact)) <= 1e-8


def test_two_choice_ode_reaches_fixed_point():
    v = an.ode_solve(2, 1.0, t_end=50.0).profiles[-1]
    fp = an.fixed_point(2, 1.0).padded(v.size - 1)
    assert np.max(np.abs(v - fp)) <= 1e-8


def test_ode_keeps_invariants():
    sol = an.ode_solve(3, 1.7, t_end=2.0, t_eval=np.linspace(0, 2, 9))
    assert np.all(sol.profiles[:, 0] == 1.0)
    for k in range(len(sol.times)):
        sol.profile(k)               # raises if any invariant breaks
    assert sol.max_monotonicity_defect <= 1e-10


def test_ode_explicit_truncation_too_small():
    with pytest.raises(an.TruncationError):
        an.ode_solve(1, 30.0, t_end=5.0, k_max=10)
    assert an.ode_solve(1, 30.0, t_end=5.0).k_max > 64


def test_sequential_ode_without_deaths_pushes_mass_up():
    seq = an.ode_solve(2, 1.0, t_end=1.0, variant="sequential").profiles[-1]
    cont = an.ode_solve(2, 1.0, t_end=1.0).profiles[-1]
    assert np.all(seq[1:4] > cont[1:4])
    # mass conservation: sum_{k>=1} v(k) = t without deaths
    assert seq[1:].sum() == pytest.approx(1.0, abs=1e-10)


# -- fixed point ----------------------------------------------------------------

@pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
def test_one_choice_fixed_point_is_poisson(lam):
    fp = an.fixed_point(1, lam)
    exact = np.array([oracle_tail(lam, i) for i in range(fp.k_max + 1)])
    assert np.max(np.abs(fp.values - exact)) <= 1e-10


def test_fixed_point_properties():
    fp = an.fixed_point(2, 1.0)
    assert np.max(np.abs(an.summed_residual(fp.values, 2, 1.0))) <= 1e-13
    assert fp.values[-1] < 1e-14
    assert fp.values[1] == pytest.approx(0.72587, abs=1e-5)
    other = an.fixed_point(2, 1.0, init=np.linspace(1, 0, 65))
    assert np.max(np.abs(other.values - fp.values)) < 10 * 1e-13 * 100


def test_fixed_point_vanishes_for_tiny_arrival_rate():
    fp = an.fixed_point(2, 1e-6)
    assert fp.values[1] < 2e-6


def test_double_exponential_decay():
    v = an.fixed_point(2, 1.0).values
    idx = [i for i in range(1, v.size) if 1e-300 < v[i] < 1e-1 and v[i] > 1e-17]
    g = np.log(-np.log(v[idx]))
    slopes = np.diff(g)
    assert np.all(np.diff(slopes) < 0)
    assert abs(slopes[-1] - math.log(2)) < 0.15


def test_recurrence_bracket_examples():
    lo, hi, ok = an.recurrence_bracket(0.5, 2, 2, 1.0)
    assert lo == pytest.approx(0.25 / 3) and hi == pytest.approx(0.25) and ok
    assert an.recurrence_bracket(0.0, 3, 2, 1.0)[:2] == (0.0, 0.0)
    assert an.recurrence_bracket(0.5, 1, 2, 3.0)[2] is False
    with pytest.raises(ValueError):
        an.recurrence_bracket(1.5, 1, 2, 1.0)


@pytest.mark.parametrize("d,lam", [(2, 1.0), (3, 1.0), (2, 2.0)])
def test_fixed_point_within_brackets(d, lam):
    v = an.fixed_point(d, lam).values
    for i in range(1, v.size):
        if v[i] < 1e-12:          # below the solver's residual resolution
            break
        lo, hi, ok = an.recurrence_bracket(v[i - 1], i, d, lam)
        assert v[i] <= hi * (1 + 1e-9) + 1e-300
        if ok:
            assert v[i] >= lo * (1 - 1e-9)


# -- j* ----------------------------------------------------------------------------

def test_jstar_small_n():
    assert an.jstar_threshold(100) == pytest.approx(9.77, abs=0.01)
    p = an.jstar_predict(100, 2)
    assert p.level == 1 and p.support == (1, 2)
    assert an.jstar_predict(10**5, 3).support == (0, 1)
    with pytest.raises(ValueError):
        an.jstar_predict(100, 1)
    with pytest.raises(ValueError):
        an.jstar_predict(10, 2)


def test_jstar_band():
    # frozen from the scan: offsets lie in [-3.02, -0.37] for n = 1e3..1e18
    ns = [10.0**k for k in range(3, 19)]
    offsets = [an.jstar_predict(n, 2).level - math.log(math.log(n)) / math.log(2) for n in ns]
    assert -3.1 <= min(offsets) and max(offsets) <= -0.3
    assert max(offsets) - min(offsets) <= 3.0
    levels = [an.jstar_predict(n, 2).level for n in ns]
    assert all(b >= a for a, b in zip(levels, levels[1:]))


def test_jstar_needs_a_crossing():
    with pytest.raises(an.TruncationError):
        an.jstar_predict(10**12, 2, profile=TailProfile(np.array([1.0, 0.9])))


def test_jstar_sequential_value():
    p = an.jstar_sequential(10**4, 2)
    assert p.level == 3
