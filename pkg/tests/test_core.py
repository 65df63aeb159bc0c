import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from twochoice.core import (LoadState, RandomSource, SimParams, TailProfile, build_state,
                            default_burn_in, place_ball, remove_ball)


def recount(loads):
    m = int(max(loads))
    return np.array([(np.asarray(loads) >= i).sum() for i in range(m + 1)])


# -- parameters and randomness ---------------------------------------------------

@pytest.mark.parametrize("kw", [dict(n=0), dict(n=5, d=0), dict(n=5, lam=0.0),
                                dict(n=5, lam=-1.0), dict(n=5, horizon=-1.0),
                                dict(n=5, seed=-3)])
def test_params_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        SimParams(**kw)


def test_params_lists_every_problem():
    p = SimParams(n=3)
    bad = SimParams.__new__(SimParams)
    object.__setattr__(bad, "n", 0)
    object.__setattr__(bad, "d", 0)
    object.__setattr__(bad, "lam", 1.0)
    object.__setattr__(bad, "seed", 0)
    object.__setattr__(bad, "horizon", 0.0)
    assert len(bad.problems()) == 2
    assert p.problems() == []
    assert p.as_dict()["lambda"] == 1.0
    assert p.arrival_rate == 3.0


def test_default_burn_in():
    assert default_burn_in(1000) == pytest.approx(3 * math.log(1000) + 10)


def test_substreams_ignore_parent_usage():
    a = RandomSource(7)
    a.generator.random(1000)
    b = RandomSource(7)
    assert a.substream(3).generator.random() == b.substream(3).generator.random()
    assert a.substream(3).generator.random() != b.substream(4).generator.random()


def test_random_source_helpers():
    r = RandomSource(1)
    assert 0 <= r.integers(0, 5) < 5
    assert 0 <= r.uniform() < 1
    draws = [r.exponential(4.0) for _ in range(4000)]
    assert np.mean(draws) == pytest.approx(0.25, abs=4 * 0.25 / math.sqrt(4000))


# -- tail profiles ------------------------------------------------------------------

@pytest.mark.parametrize("values", [[0.9, 0.5], [1, 0.2, 0.3], [1, 1.2], [1, -0.1], []])
def test_tail_profile_rejects_invalid(values):
    with pytest.raises(ValueError):
        TailProfile(np.array(values, dtype=float))


def test_tail_profile_access():
    p = TailProfile.from_tail_counts([3, 2, 1], 3)
    assert np.allclose(p.values, [1, 2 / 3, 1 / 3])
    assert p.k_max == 2
    assert p.at(5) == 0.0
    assert np.allclose(p.padded(4), [1, 2 / 3, 1 / 3, 0, 0])
    assert np.allclose(p.padded(1), [1, 2 / 3])


# -- load state --------------------------------------------------------------------

def test_small_state_counts():
    s = LoadState([2, 0, 1])
    assert s.total == 3 and s.max_load == 2 and s.n == 3
    assert s.tail_counts.tolist() == [3, 2, 1]
    assert np.allclose(s.profile().values, [1, 2 / 3, 1 / 3])
    s.check()


def test_empty_state_profile():
    s = LoadState(np.zeros(4, dtype=int))
    assert s.profile().values.tolist() == [1.0]
    with pytest.raises(ValueError):
        remove_ball(s, 0)


@pytest.mark.parametrize("loads", [[], [[1, 2]], [1, -1]])
def test_state_rejects_bad_loads(loads):
    with pytest.raises(ValueError):
        LoadState(loads)


def test_build_state_checks_length():
    with pytest.raises(ValueError):
        build_state(SimParams(n=3), [0, 1])
    assert build_state(SimParams(n=2), [0, 1]).total == 1


def test_place_ball_first_least_loaded():
    s = LoadState([1, 0, 0])
    assert place_ball(s, [0, 2, 1]) == 2
    assert place_ball(s, [0, 1]) == 1
    assert place_ball(s, [2, 1, 0]) == 2      # all at 1: first chosen wins
    assert s.loads.tolist() == [1, 1, 2]
    s.check()
    with pytest.raises(ValueError):
        place_ball(s, [3])
    with pytest.raises(ValueError):
        place_ball(s, [])


def test_remove_ball_canonical_order():
    # balls enumerated bin by bin: indices 0, 1 in bin 0, index 2 in bin 2
    for idx, expect in [(0, 0), (1, 0), (2, 2)]:
        s = LoadState([2, 0, 1])
        assert remove_ball(s, idx) == expect
        s.check()
    with pytest.raises(ValueError):
        remove_ball(LoadState([2, 0, 1]), 3)


def test_copy_is_independent():
    s = LoadState([1, 2])
    c = s.copy()
    place_ball(c, [0])
    assert s.loads.tolist() == [1, 2] and c.loads.tolist() == [2, 2]
    s.check()
    c.check()


def test_capacity_growth_past_initial_buffer():
    s = LoadState([0])
    for _ in range(300):
        place_ball(s, [0])
    assert s.max_load == 300
    assert s.tail_counts.tolist() == [1] * 301
    s.check()


@given(n=st.integers(1, 6), ops=st.lists(
    st.tuples(st.booleans(), st.lists(st.integers(0, 5), min_size=1, max_size=3),
              st.integers(0, 10**6)), max_size=80))
def test_incremental_counts_match_recount(n, ops):
    s = LoadState(np.zeros(n, dtype=int))
    ref = np.zeros(n, dtype=int)
    for is_place, choices, k in ops:
        if is_place or ref.sum() == 0:
            choices = [c % n for c in choices]
            b = place_ball(s, choices)
            best = min(choices, key=lambda c: (ref[c], choices.index(c)))
            assert b == best
            ref[b] += 1
        else:
            idx = k % int(ref.sum())
            b = remove_ball(s, idx)
            assert b == int(np.searchsorted(np.cumsum(ref), idx, side="right"))
            ref[b] -= 1
        assert s.loads.tolist() == ref.tolist()
        assert s.tail_counts.tolist() == recount(ref).tolist()
        assert s.total == ref.sum() and s.max_load == ref.max()
    s.check()


@given(st.lists(st.integers(0, 20), min_size=1, max_size=30))
def test_profile_is_exact_tail_fraction(loads):
    p = LoadState(loads).profile()
    for i in range(max(loads) + 2):
        assert p.at(i) == pytest.approx(np.mean(np.asarray(loads) >= i))
