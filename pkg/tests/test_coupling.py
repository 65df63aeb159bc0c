import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from twochoice.core import LoadState, RandomSource, SimParams
from twochoice.coupling import (CoupledState, advance_coupled, coupled_arrival,
                                coupled_death, coupled_step, coupling_decay_experiment,
                                dominance_run)
from twochoice.engine import simulate_until

SMALL = list(itertools.product(range(4), repeat=2))


def all_events(n, x, y, d):
    for choices in itertools.product(range(n), repeat=d):
        yield "arrival", choices
    for j in range(n):
        for k in range(1, max(x[j], y[j]) + 1):
            yield "death", (j, k)


def apply(cs, kind, arg):
    if kind == "arrival":
        return coupled_arrival(cs, arg)
    return coupled_death(cs, *arg)


def test_identical_copies_stay_identical(gen):
    params = SimParams(n=20, d=2)
    cs = CoupledState([1] * 20, [1] * 20)
    for _ in range(500):
        coupled_step(cs, gen, params)
        assert np.array_equal(cs.x.loads, cs.y.loads)
    assert cs.l1_distance == 0
    cs.check()


def test_death_in_one_copy_only():
    cs = CoupledState([1, 0], [0, 0])
    rx, ry = coupled_death(cs, 0, 1)
    assert rx.kind == "death" and rx.bin == 0 and rx.height == 1 and ry is None
    assert cs.l1_distance == 0
    with pytest.raises(ValueError):
        coupled_death(cs, 0, 1)           # slot no longer occupied


@pytest.mark.parametrize("d", [1, 2, 3])
def test_single_events_never_increase_distance(d):
    for x, y in itertools.product(SMALL, SMALL):
        base = CoupledState(list(x), list(y))
        for kind, arg in all_events(2, x, y, d):
            cs = CoupledState(list(x), list(y))
            before = cs.l1_distance
            apply(cs, kind, arg)
            cs.check()
            assert cs.l1_distance - before in (-2, -1, 0)
            assert cs.violations == 0
            if kind == "death":
                j, k = arg
                # whichever copy holds a ball at height k loses it
                assert cs.x.loads[j] == x[j] - (x[j] >= k)
                assert cs.y.loads[j] == y[j] - (y[j] >= k)
        assert base.slot_count == sum(max(a, b) for a, b in zip(x, y))


def test_single_events_preserve_dominance():
    pairs = [(x, y) for x in itertools.product(range(3), repeat=2)
             for y in itertools.product(range(3), repeat=2)
             if all(a <= b for a, b in zip(x, y))]
    for x, y in pairs:
        for d in (1, 2):
            for kind, arg in all_events(2, x, y, d):
                cs = CoupledState(list(x), list(y), check_dominance=True)
                apply(cs, kind, arg)
                assert np.all(cs.x.loads <= cs.y.loads), (x, y, kind, arg)
                assert cs.dominance_violations == 0


def test_dominance_requires_ordered_start():
    with pytest.raises(ValueError):
        CoupledState([1, 0], [0, 1], check_dominance=True)


@given(x=st.lists(st.integers(0, 4), min_size=3, max_size=3),
       y=st.lists(st.integers(0, 4), min_size=3, max_size=3),
       seed=st.integers(0, 2**32))
def test_paired_balls_die_together(x, y, seed):
    """Shadow every ball with an id; balls placed at the same slot share one."""
    rng = np.random.default_rng(seed)
    cs = CoupledState(x, y)
    fresh = iter(range(10**9))
    xs = [[("x", next(fresh)) for _ in range(a)] for a in x]
    ys = [[("y", next(fresh)) for _ in range(b)] for b in y]
    for _ in range(200):
        before = cs.l1_distance
        if rng.random() < 0.5 or cs.slot_count == 0:
            rx, ry = coupled_arrival(cs, rng.integers(0, 3, size=2))
            if (rx.bin, rx.height) == (ry.bin, ry.height):
                shared = ("p", next(fresh))
                xs[rx.bin].append(shared)
                ys[ry.bin].append(shared)
            else:
                xs[rx.bin].append(("x", next(fresh)))
                ys[ry.bin].append(("y", next(fresh)))
        else:
            top = np.maximum(cs.x.loads, cs.y.loads)
            j = int(rng.choice(3, p=top / top.sum()))
            k = int(rng.integers(1, top[j] + 1))
            rx, ry = coupled_death(cs, j, k)
            dx = xs[j].pop(k - 1) if rx is not None else None
            dy = ys[j].pop(k - 1) if ry is not None else None
            for a, b in ((dx, dy), (dy, dx)):
                if a is not None and a[0] == "p":
                    assert b == a
        assert cs.l1_distance <= before
        assert [len(b) for b in xs] == cs.x.loads.tolist()
        assert [len(b) for b in ys] == cs.y.loads.tolist()
        # paired balls sit at identical slots
        for j in range(3):
            for h, ball in enumerate(xs[j]):
                if ball[0] == "p":
                    assert h < len(ys[j]) and ys[j][h] == ball
    cs.check()


def test_step_records(gen):
    params = SimParams(n=4, d=2)
    cs = CoupledState([0, 0, 0, 0], [0, 0, 0, 0])
    rx, ry = coupled_step(cs, gen, params)
    assert rx.kind == ry.kind == "arrival" and rx.time == ry.time == cs.clock > 0


def test_zero_initial_distance_stays_zero():
    res = coupling_decay_experiment(SimParams(n=30), 0, [0.5, 1, 2], 10, RandomSource(1))
    assert np.all(res.mean == 0) and res.violations == 0


def test_decay_below_survivor_bound():
    res = coupling_decay_experiment(SimParams(n=100, d=2), 200, [0.5, 1, 2, 3, 5], 100,
                                    RandomSource(2))
    assert res.bound[1] == pytest.approx(200 * math.exp(-1))
    assert res.bound[4] == pytest.approx(1.3476, abs=1e-4)
    assert np.all(res.within_bound(3.0))
    assert res.violations == 0


def test_decay_rejects_bad_grid():
    with pytest.raises(ValueError):
        coupling_decay_experiment(SimParams(n=5), 3, [2, 1], 2, RandomSource(0))


def test_dominance_over_many_events(gen):
    params = SimParams(n=50, d=2)
    y0 = gen.integers(0, 4, size=50)
    assert dominance_run(params, gen, 1e9, y0=y0, max_events=100_000)
    assert dominance_run(params, gen, 50.0, x0=y0, y0=y0)
    with pytest.raises(ValueError):
        dominance_run(params, gen, 1.0)


def test_marginals_match_the_plain_engine():
    params = SimParams(n=100, d=2)
    src = RandomSource(17)
    y0 = np.full(100, 2)
    cx, cy, px, py = [], [], [], []
    for k in range(300):
        cs = CoupledState(np.zeros(100, dtype=int), y0)
        advance_coupled(cs, src.substream(k), params, 1.0)
        cx.append(cs.x.total)
        cy.append(cs.y.total)
        a = LoadState(np.zeros(100, dtype=int))
        simulate_until(a, src.substream(10_000 + k), params, 1.0)
        b = LoadState(y0)
        simulate_until(b, src.substream(20_000 + k), params, 1.0)
        px.append(a.total)
        py.append(b.total)
    assert sps.ks_2samp(cx, px).pvalue > 0.001
    assert sps.ks_2samp(cy, py).pvalue > 0.001
