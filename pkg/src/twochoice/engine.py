"""Exact continuous-time simulation of the n-bin immigration-death process.

The event loop is the jump chain of the process: with ``B`` balls present the
next event comes after an Exp(lam*n + B) wait and is an arrival with
probability lam*n / (lam*n + B), otherwise the death of a uniform ball.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .core import (
    _KIND_NAMES,
    _add_to_bin,
    _remove_at,
    EventRecord,
    LoadState,
    RandomSource,
    SimParams,
    default_burn_in,
)

__all__ = [
    "Snapshot",
    "RunRecord",
    "next_event",
    "simulate_until",
    "equilibrium_sample",
    "sequential_throw_run",
    "map_trials",
]

_STOPPED, _MAXED, _GROW_TAILS, _GROW_EVENTS, _GROW_PATH = range(5)


@numba.njit(nogil=True, cache=True)
def _advance(loads, tails, tree, meta, clock, t_stop, max_events, lam_n, d, rng,
             ev_t, ev_k, ev_b, ev_h, ev_pos, mp_t, mp_v, mp_pos):
    n = loads.shape[0]
    record = ev_t.shape[0] > 0
    track = mp_t.shape[0] > 0
    done = 0
    while done < max_events:
        if meta[1] + 2 >= tails.shape[0]:
            return clock, done, _GROW_TAILS
        if record and ev_pos[0] >= ev_t.shape[0]:
            return clock, done, _GROW_EVENTS
        if track and mp_pos[0] >= mp_t.shape[0]:
            return clock, done, _GROW_PATH
        total = meta[0]
        rate = lam_n + total
        t_next = clock + rng.standard_exponential() / rate
        if t_next > t_stop:
            return t_stop, done, _STOPPED
        clock = t_next
        old_max = meta[1]
        if rng.random() * rate < lam_n:
            best = rng.integers(0, n)
            best_load = loads[best]
            for _ in range(1, d):
                j = rng.integers(0, n)
                if loads[j] < best_load:
                    best = j
                    best_load = loads[j]
            b = best
            h = _add_to_bin(loads, tails, tree, meta, b)
            kind = 0
        else:
            b, h = _remove_at(loads, tails, tree, meta, rng.integers(0, total))
            kind = 1
        done += 1
        if record:
            p = ev_pos[0]
            ev_t[p] = clock
            ev_k[p] = kind
            ev_b[p] = b
            ev_h[p] = h
            ev_pos[0] = p + 1
        if track and meta[1] != old_max:
            p = mp_pos[0]
            mp_t[p] = clock
            mp_v[p] = meta[1]
            mp_pos[0] = p + 1
    return clock, done, _MAXED


@numba.njit(nogil=True, cache=True)
def _throw(loads, tails, tree, meta, d, count, rng):
    n = loads.shape[0]
    for _ in range(count):
        best = rng.integers(0, n)
        best_load = loads[best]
        for _ in range(1, d):
            j = rng.integers(0, n)
            if loads[j] < best_load:
                best = j
                best_load = loads[j]
        _add_to_bin(loads, tails, tree, meta, best)


class _Buffer:
    """Growable set of parallel arrays filled by a kernel."""

    def __init__(self, dtypes: Sequence, capacity: int):
        self.arrays = [np.zeros(capacity, dtype=dt) for dt in dtypes]
        self.pos = np.zeros(1, dtype=np.int64)

    def grow(self):
        self.arrays = [np.concatenate([a, np.zeros_like(a)]) for a in self.arrays]

    def view(self):
        return [a[: self.pos[0]].copy() for a in self.arrays]


_EMPTY_F = np.zeros(0)
_EMPTY_I = np.zeros(0, dtype=np.int64)


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected a RandomSource or numpy Generator, got {type(rng)}")


def _drive(state: LoadState, gen, params: SimParams, t_stop: float,
           max_events: int = 2**62, log: _Buffer | None = None,
           path: _Buffer | None = None) -> int:
    """Run the event kernel until ``t_stop`` or ``max_events`` events."""
    done_total = 0
    while True:
        ev = log.arrays if log is not None else (_EMPTY_F, _EMPTY_I, _EMPTY_I, _EMPTY_I)
        ev_pos = log.pos if log is not None else _EMPTY_I
        mp = path.arrays if path is not None else (_EMPTY_F, _EMPTY_I)
        mp_pos = path.pos if path is not None else _EMPTY_I
        clock, done, status = _advance(
            state.loads, state._tails, state._tree, state._meta, state.clock,
            float(t_stop), max_events - done_total, float(params.arrival_rate),
            int(params.d), gen, *ev, ev_pos, *mp, mp_pos)
        state.clock = clock
        done_total += done
        if status == _GROW_TAILS:
            state.ensure_capacity(state.max_load + 2)
        elif status == _GROW_EVENTS:
            log.grow()
        elif status == _GROW_PATH:
            path.grow()
        else:
            return done_total


def next_event(state: LoadState, rng, params: SimParams) -> EventRecord:
    """Apply exactly one event to ``state`` and return it."""
    log = _Buffer((np.float64, np.int64, np.int64, np.int64), 1)
    _drive(state, _generator(rng), params, np.inf, max_events=1, log=log)
    t, k, b, h = (a[0] for a in log.view())
    return EventRecord(float(t), _KIND_NAMES[k], int(b), int(h))


@dataclass
class Snapshot:
    time: float
    total: int
    max_load: int
    tail_counts: np.ndarray
    loads: np.ndarray | None = None


@dataclass
class RunRecord:
    """Samples from one trajectory plus the provenance needed to rerun it."""

    params: SimParams
    stream: tuple = ()
    t_start: float = 0.0
    t_end: float = 0.0
    sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    totals: np.ndarray = field(default_factory=lambda: _EMPTY_I.copy())
    max_loads: np.ndarray = field(default_factory=lambda: _EMPTY_I.copy())
    tail_counts: list = field(default_factory=list)
    loads: np.ndarray | None = None
    events: dict | None = None
    max_path: tuple | None = None
    event_count: int = 0

    @property
    def n(self) -> int:
        return self.params.n

    def __len__(self):
        return len(self.sample_times)

    def tail_matrix(self, k_max: int | None = None) -> np.ndarray:
        """Rows u(., X) of each snapshot, zero-padded to ``k_max``."""
        if k_max is None:
            k_max = max((len(tc) - 1 for tc in self.tail_counts), default=0)
        out = np.zeros((len(self.tail_counts), k_max + 1))
        for r, tc in enumerate(self.tail_counts):
            m = min(len(tc), k_max + 1)
            out[r, :m] = tc[:m]
        return out / self.n

    def snapshots(self):
        for r in range(len(self)):
            yield Snapshot(float(self.sample_times[r]), int(self.totals[r]),
                           int(self.max_loads[r]), self.tail_counts[r],
                           None if self.loads is None else self.loads[r])

    def event_records(self) -> list[EventRecord]:
        if self.events is None:
            return []
        e = self.events
        return [EventRecord(float(t), _KIND_NAMES[k], int(b), int(h))
                for t, k, b, h in zip(e["time"], e["kind"], e["bin"], e["height"])]

    def provenance(self) -> dict:
        out = self.params.as_dict()
        out["stream"] = list(self.stream)
        return out

    def jsonl_rows(self, experiment: str, trial: int | None = None) -> list[dict]:
        rows = []
        base = {"experiment": experiment, **self.provenance()}
        if trial is not None:
            base["trial"] = int(trial)
        for s in self.snapshots():
            row = dict(base, time=s.time, total=s.total, max_load=s.max_load,
                       tail_counts=[int(c) for c in s.tail_counts])
            if s.loads is not None:
                row["loads"] = [int(x) for x in s.loads]
            rows.append(row)
        return rows


def simulate_until(state: LoadState, rng, params: SimParams, t_end: float,
                   sample_times: Iterable[float] = (),
                   observers: Sequence[Callable[[Snapshot], None]] = (),
                   full_vectors: bool = False, record_events: bool = False,
                   track_max: bool = False) -> RunRecord:
    """Advance ``state`` to ``t_end``, snapshotting at ``sample_times``.

    A snapshot at time s reflects every event with time <= s.  When
    ``track_max`` is set the record holds every change of the maximum load,
    which makes interval extrema exact.
    """
    if t_end < state.clock:
        raise ValueError(f"t_end={t_end} precedes the state clock {state.clock}")
    times = np.asarray(sorted(sample_times), dtype=float)
    if times.size and (times[0] < state.clock or times[-1] > t_end):
        raise ValueError("sample times must lie in [state.clock, t_end]")
    gen = _generator(rng)
    stream = rng.key if isinstance(rng, RandomSource) else ()
    log = _Buffer((np.float64, np.int64, np.int64, np.int64), 1024) if record_events else None
    path = _Buffer((np.float64, np.int64), 64) if track_max else None
    t_start = state.clock
    m_start = state.max_load

    totals, maxes, tails, vecs = [], [], [], []
    count = 0
    for s in times:
        count += _drive(state, gen, params, s, log=log, path=path)
        snap = Snapshot(float(s), state.total, state.max_load, state.tail_counts,
                        state.loads.copy() if full_vectors else None)
        totals.append(snap.total)
        maxes.append(snap.max_load)
        tails.append(snap.tail_counts)
        if full_vectors:
            vecs.append(snap.loads)
        for obs in observers:
            obs(snap)
    count += _drive(state, gen, params, t_end, log=log, path=path)

    events = None
    if log is not None:
        t, k, b, h = log.view()
        events = {"time": t, "kind": k, "bin": b, "height": h}
    max_path = None
    if path is not None:
        pt, pv = path.view()
        max_path = (np.concatenate([[t_start], pt]), np.concatenate([[m_start], pv]))
    return RunRecord(
        params=params, stream=stream, t_start=t_start, t_end=float(t_end),
        sample_times=times, totals=np.asarray(totals, dtype=np.int64),
        max_loads=np.asarray(maxes, dtype=np.int64), tail_counts=tails,
        loads=np.asarray(vecs, dtype=np.int64).reshape(-1, state.n) if full_vectors else None,
        events=events, max_path=max_path, event_count=count)


def equilibrium_sample(params: SimParams, rng, burn_in: float | None = None,
                       count: int = 100, spacing: float = 1.0,
                       full_vectors: bool = False, track_max: bool = False
                       ) -> RunRecord:
    """Burn in from the empty state, then take ``count`` spaced snapshots."""
    if burn_in is None:
        burn_in = default_burn_in(params.n)
    if burn_in < 0 or not spacing > 0 or count < 0:
        raise ValueError("need burn_in >= 0, spacing > 0, count >= 0")
    state = LoadState(np.zeros(params.n, dtype=np.int64))
    times = burn_in + spacing * np.arange(count)
    t_end = float(times[-1]) if count else float(burn_in)
    return simulate_until(state, rng, params, t_end, times,
                          full_vectors=full_vectors, track_max=track_max)


def sequential_throw_run(n: int, d: int, ball_count: int, rng) -> LoadState:
    """Throw ``ball_count`` balls into ``n`` empty bins, no deaths."""
    if ball_count < 0:
        raise ValueError("ball_count must be nonnegative")
    SimParams(n=n, d=d)  # validates n, d
    state = LoadState(np.zeros(n, dtype=np.int64))
    gen = _generator(rng)
    done = 0
    while done < ball_count:
        # the max load grows by at most one per ball
        chunk = min(ball_count - done, 1024)
        state.ensure_capacity(state.max_load + chunk + 1)
        _throw(state.loads, state._tails, state._tree, state._meta, int(d),
               chunk, gen)
        done += chunk
    return state


def default_threads() -> int:
    return os.cpu_count() or 1


def map_trials(func: Callable, source: RandomSource, trials: int,
               threads: int | None = None) -> list:
    """Run ``func(k, source.substream(k))`` for each trial, results in trial order.

    The kernels release the GIL, so a thread pool gives real parallelism;
    each trial owns its substream, so the schedule cannot change results.
    """
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or trials <= 1:
        return [func(k, source.substream(k)) for k in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(func, k, source.substream(k)) for k in range(trials)]
        return [f.result() for f in futures]
