"""Two copies of the process driven by shared randomness.

Both copies see the same arrival times and the same d choices, and deaths are
indexed by (bin, height) slots: when slot (j, k) fires, whichever copy has a
ball at height k in bin j loses it.  Only the S = sum_j max(x_j, y_j)
occupied slots can produce a death, so the death clock runs at rate S and the
firing slot is uniform among them, located through a Fenwick tree over the
per-bin maxima.

Under this construction the L1 distance between the copies never increases,
and x <= y coordinatewise is preserved.  The kernels count violations of
both so that experiments can assert there were none.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import (
    _add_to_bin,
    _drop_from_bin,
    _fen_add,
    _fen_build,
    _fen_find,
    _least_loaded,
    EventRecord,
    LoadState,
    RandomSource,
    SimParams,
)
from .engine import _generator, map_trials, sequential_throw_run

__all__ = [
    "CoupledState",
    "coupled_step",
    "coupled_arrival",
    "coupled_death",
    "coupling_decay_experiment",
    "dominance_run",
    "DecayResult",
]

# cmeta layout
_S, _DIST, _VIOL, _DOM = range(4)
# info layout for the last event: kind, x bin, x height, y bin, y height
_STOPPED, _MAXED, _GROW_X, _GROW_Y = range(4)


@numba.njit(nogil=True, cache=True)
def _pair_stats(xl, yl, j):
    a = xl[j]
    b = yl[j]
    return max(a, b), abs(a - b)


@numba.njit(nogil=True, cache=True)
def _c_arrival(xl, xt, xtree, xmeta, yl, yt, ytree, ymeta, mtree, cmeta,
               choices, info, check_dom):
    bx = _least_loaded(xl, choices)
    by = _least_loaded(yl, choices)
    mx0, dx0 = _pair_stats(xl, yl, bx)
    my0, dy0 = _pair_stats(xl, yl, by)
    hx = _add_to_bin(xl, xt, xtree, xmeta, bx)
    hy = _add_to_bin(yl, yt, ytree, ymeta, by)
    mx1, dx1 = _pair_stats(xl, yl, bx)
    if by == bx:
        delta_s = mx1 - mx0
        delta_d = dx1 - dx0
        _fen_add(mtree, bx, mx1 - mx0)
    else:
        my1, dy1 = _pair_stats(xl, yl, by)
        delta_s = (mx1 - mx0) + (my1 - my0)
        delta_d = (dx1 - dx0) + (dy1 - dy0)
        _fen_add(mtree, bx, mx1 - mx0)
        _fen_add(mtree, by, my1 - my0)
    cmeta[_S] += delta_s
    cmeta[_DIST] += delta_d
    if delta_d > 0:
        cmeta[_VIOL] += 1
    if check_dom and (xl[bx] > yl[bx] or xl[by] > yl[by]):
        cmeta[_DOM] += 1
    info[0] = 0
    info[1] = bx
    info[2] = hx
    info[3] = by
    info[4] = hy


@numba.njit(nogil=True, cache=True)
def _c_death(xl, xt, xtree, xmeta, yl, yt, ytree, ymeta, mtree, cmeta,
             j, k, info, check_dom):
    m0, d0 = _pair_stats(xl, yl, j)
    info[0] = 1
    info[1] = -1
    info[2] = -1
    info[3] = -1
    info[4] = -1
    if xl[j] >= k:
        _drop_from_bin(xl, xt, xtree, xmeta, j)
        info[1] = j
        info[2] = k
    if yl[j] >= k:
        _drop_from_bin(yl, yt, ytree, ymeta, j)
        info[3] = j
        info[4] = k
    m1, d1 = _pair_stats(xl, yl, j)
    _fen_add(mtree, j, m1 - m0)
    cmeta[_S] += m1 - m0
    cmeta[_DIST] += d1 - d0
    if d1 > d0:
        cmeta[_VIOL] += 1
    if check_dom and xl[j] > yl[j]:
        cmeta[_DOM] += 1


@numba.njit(nogil=True, cache=True)
def _c_advance(xl, xt, xtree, xmeta, yl, yt, ytree, ymeta, mtree, cmeta,
               clock, t_stop, max_events, lam_n, d, rng, choices, info, check_dom):
    n = xl.shape[0]
    done = 0
    while done < max_events:
        if xmeta[1] + 2 >= xt.shape[0]:
            return clock, done, _GROW_X
        if ymeta[1] + 2 >= yt.shape[0]:
            return clock, done, _GROW_Y
        s = cmeta[_S]
        rate = lam_n + s
        t_next = clock + rng.standard_exponential() / rate
        if t_next > t_stop:
            return t_stop, done, _STOPPED
        clock = t_next
        if rng.random() * rate < lam_n:
            for c in range(d):
                choices[c] = rng.integers(0, n)
            _c_arrival(xl, xt, xtree, xmeta, yl, yt, ytree, ymeta, mtree, cmeta,
                       choices, info, check_dom)
        else:
            j, off = _fen_find(mtree, rng.integers(0, s))
            _c_death(xl, xt, xtree, xmeta, yl, yt, ytree, ymeta, mtree, cmeta,
                     j, off + 1, info, check_dom)
        done += 1
    return clock, done, _MAXED


class CoupledState:
    """Pair of load states with shared clock and incrementally kept L1 distance."""

    def __init__(self, x_loads, y_loads, clock: float = 0.0,
                 check_dominance: bool = False):
        self.x = LoadState(x_loads, clock)
        self.y = LoadState(y_loads, clock)
        if self.x.n != self.y.n:
            raise ValueError("coupled states need the same number of bins")
        self.check_dominance = bool(check_dominance)
        if self.check_dominance and np.any(self.x.loads > self.y.loads):
            raise ValueError("dominance check requires x <= y coordinatewise")
        top = np.maximum(self.x.loads, self.y.loads)
        self._mtree = _fen_build(top)
        self._cmeta = np.array(
            [int(top.sum()), int(np.abs(self.x.loads - self.y.loads).sum()), 0, 0],
            dtype=np.int64)
        self._info = np.zeros(5, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def clock(self) -> float:
        return self.x.clock

    @clock.setter
    def clock(self, t: float):
        self.x.clock = self.y.clock = float(t)

    @property
    def l1_distance(self) -> int:
        return int(self._cmeta[_DIST])

    @property
    def slot_count(self) -> int:
        return int(self._cmeta[_S])

    @property
    def violations(self) -> int:
        """Events at which the distance went up (always 0 for a correct coupling)."""
        return int(self._cmeta[_VIOL])

    @property
    def dominance_violations(self) -> int:
        return int(self._cmeta[_DOM])

    def _args(self):
        x, y = self.x, self.y
        return (x.loads, x._tails, x._tree, x._meta,
                y.loads, y._tails, y._tree, y._meta, self._mtree, self._cmeta)

    def _records(self) -> tuple:
        kind, bx, hx, by, hy = (int(v) for v in self._info)
        name = "arrival" if kind == 0 else "death"
        rx = EventRecord(self.clock, name, bx, hx) if bx >= 0 else None
        ry = EventRecord(self.clock, name, by, hy) if by >= 0 else None
        return rx, ry

    def check(self) -> None:
        self.x.check()
        self.y.check()
        top = np.maximum(self.x.loads, self.y.loads)
        assert self.slot_count == int(top.sum()), "slot count out of sync"
        assert self.l1_distance == int(np.abs(self.x.loads - self.y.loads).sum()), \
            "distance out of sync"
        assert np.array_equal(_fen_build(top), self._mtree), "slot tree out of sync"

    def __repr__(self):
        return (f"CoupledState(n={self.n}, clock={self.clock}, "
                f"l1_distance={self.l1_distance})")


def coupled_arrival(cs: CoupledState, choices) -> tuple:
    """Place one arriving ball with the given choices in both copies."""
    choices = np.asarray(choices, dtype=np.int64).reshape(-1)
    if choices.size == 0 or choices.min() < 0 or choices.max() >= cs.n:
        raise ValueError(f"invalid choices {choices.tolist()} for n={cs.n}")
    cs.x.ensure_capacity(cs.x.max_load + 1)
    cs.y.ensure_capacity(cs.y.max_load + 1)
    _c_arrival(*cs._args(), choices, cs._info, cs.check_dominance)
    return cs._records()


def coupled_death(cs: CoupledState, bin: int, height: int) -> tuple:
    """Fire death slot (bin, height); it must be occupied in at least one copy."""
    if not 0 <= bin < cs.n:
        raise ValueError(f"bin {bin} out of range")
    top = max(int(cs.x.loads[bin]), int(cs.y.loads[bin]))
    if not 1 <= height <= top:
        raise ValueError(f"slot ({bin}, {height}) is not occupied")
    _c_death(*cs._args(), int(bin), int(height), cs._info, cs.check_dominance)
    return cs._records()


def _c_drive(cs: CoupledState, gen, params: SimParams, t_stop: float,
             max_events: int = 2**62) -> int:
    choices = np.zeros(params.d, dtype=np.int64)
    done_total = 0
    while True:
        clock, done, status = _c_advance(
            *cs._args(), cs.clock, float(t_stop), max_events - done_total,
            float(params.arrival_rate), int(params.d), gen, choices, cs._info,
            cs.check_dominance)
        cs.clock = clock
        done_total += done
        if status == _GROW_X:
            cs.x.ensure_capacity(cs.x.max_load + 2)
        elif status == _GROW_Y:
            cs.y.ensure_capacity(cs.y.max_load + 2)
        else:
            return done_total


def coupled_step(cs: CoupledState, rng, params: SimParams) -> tuple:
    """One coupled event; returns (x record, y record), None where nothing changed."""
    _c_drive(cs, _generator(rng), params, np.inf, max_events=1)
    return cs._records()


def advance_coupled(cs: CoupledState, rng, params: SimParams, t_end: float) -> int:
    """Run the coupled pair to ``t_end``; returns the number of events."""
    if t_end < cs.clock:
        raise ValueError("t_end precedes the coupled clock")
    return _c_drive(cs, _generator(rng), params, t_end)


@dataclass
class DecayResult:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    bound: np.ndarray
    violations: int
    trials: int
    r0: int

    def within_bound(self, z: float = 3.0) -> np.ndarray:
        return self.mean <= self.bound + z * self.se


def _decay_trial(params, r0, t_grid):
    def run(k, src: RandomSource):
        gen = src.generator
        y0 = sequential_throw_run(params.n, params.d, r0, gen).loads
        cs = CoupledState(np.zeros(params.n, dtype=np.int64), y0)
        out = np.zeros(len(t_grid))
        for g, t in enumerate(t_grid):
            _c_drive(cs, gen, params, t)
            out[g] = cs.l1_distance
        return out, cs.violations
    return run


def coupling_decay_experiment(params: SimParams, r0: int, t_grid, trials: int,
                              rng: RandomSource, threads: int | None = None
                              ) -> DecayResult:
    """Mean L1 distance between an empty start and an r0-ball start over time.

    The mean should sit below r0 * exp(-t), the expected number of survivors
    among r0 independent unit-rate lifetimes.
    """
    if r0 < 0 or trials < 1:
        raise ValueError("need r0 >= 0 and trials >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size and (np.any(np.diff(t_grid) < 0) or t_grid[0] < 0):
        raise ValueError("t_grid must be nonnegative and nondecreasing")
    results = map_trials(_decay_trial(params, int(r0), t_grid), rng, trials, threads)
    dist = np.array([r[0] for r in results]).reshape(trials, -1)
    violations = sum(r[1] for r in results)
    se = dist.std(axis=0, ddof=1) / np.sqrt(trials) if trials > 1 else np.zeros(len(t_grid))
    return DecayResult(t_grid, dist.mean(axis=0), se, r0 * np.exp(-t_grid),
                       int(violations), int(trials), int(r0))


def dominance_run(params: SimParams, rng, t_end: float, x0=None, y0=None,
                  max_events: int | None = None) -> bool:
    """Run a coupled pair with x0 <= y0 and report whether x <= y held throughout.

    A False return means the implementation is broken, not a possible outcome.
    """
    x0 = np.zeros(params.n, dtype=np.int64) if x0 is None else np.asarray(x0)
    if y0 is None:
        raise ValueError("y0 is required")
    cs = CoupledState(x0, y0, check_dominance=True)
    gen = _generator(rng)
    _c_drive(cs, gen, params, t_end,
             max_events=2**62 if max_events is None else int(max_events))
    return cs.dominance_violations == 0 and bool(np.all(cs.x.loads <= cs.y.loads))
