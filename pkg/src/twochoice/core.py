"""Domain types and elementary state transitions for the d-choice process.

Bin loads are kept in a ``LoadState`` that carries, next to the load vector,
the occupancy tail counts ``tail_counts[i] = #{j : loads[j] >= i}`` and a
Fenwick tree over the loads.  The tree gives O(log n) access to the
canonical ball enumeration (bins in index order, balls within a bin by
height), which is how a uniformly chosen ball is located at a death event.

The low-level transitions are numba kernels so that the event loops in
``engine`` and ``coupling`` can call them without leaving compiled code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

__all__ = [
    "SimParams",
    "LoadState",
    "TailProfile",
    "RandomSource",
    "EventRecord",
    "build_state",
    "place_ball",
    "remove_ball",
    "default_burn_in",
]

ARRIVAL = 0
DEATH = 1
_KIND_NAMES = ("arrival", "death")

# initial tail-count buffer; grown on demand
_TAIL_CAPACITY = 64


@dataclass(frozen=True)
class SimParams:
    """Model parameters: ``n`` bins, ``d`` choices, arrival rate ``lam`` per bin."""

    n: int
    d: int = 2
    lam: float = 1.0
    seed: int = 0
    horizon: float = 0.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if int(self.n) != self.n or self.n < 1:
            out.append(f"n must be a positive integer, got {self.n!r}")
        if int(self.d) != self.d or self.d < 1:
            out.append(f"d must be a positive integer, got {self.d!r}")
        if not self.lam > 0:
            out.append(f"lambda must be positive, got {self.lam!r}")
        if not self.horizon >= 0:
            out.append(f"horizon must be nonnegative, got {self.horizon!r}")
        if not 0 <= int(self.seed) < 2**64:
            out.append(f"seed must fit in 64 bits, got {self.seed!r}")
        return out

    @property
    def arrival_rate(self) -> float:
        """Total arrival rate lam * n."""
        return self.lam * self.n

    def as_dict(self) -> dict:
        return {"n": int(self.n), "d": int(self.d), "lambda": float(self.lam),
                "seed": int(self.seed), "horizon": float(self.horizon)}


def default_burn_in(n: int) -> float:
    """Burn-in from the empty state: 3 ln n + 10 time units."""
    return 3.0 * np.log(max(n, 1)) + 10.0


class RandomSource:
    """Seeded generator with reproducible, order-independent substreams.

    Substream ``k`` of a source is derived from ``(seed, key + (k,))`` through
    ``numpy.random.SeedSequence``, so it does not depend on how much the
    parent (or any sibling) has been used.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def substream(self, index: int) -> "RandomSource":
        return RandomSource(self.seed, self.key + (int(index),))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)."""
        return int(self.generator.integers(low, high))

    def uniform(self) -> float:
        """Uniform real in [0, 1)."""
        return float(self.generator.random())

    def exponential(self, rate: float) -> float:
        return float(self.generator.standard_exponential()) / rate

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, key={self.key})"


@dataclass(frozen=True)
class EventRecord:
    """One jump of a trajectory.

    ``height`` is the new ball's height for an arrival and the height of the
    removed ball for a death.
    """

    time: float
    kind: str
    bin: int
    height: int


@dataclass
class TailProfile:
    """Nonincreasing sequence ``values[i]`` = proportion of bins with load >= i."""

    values: np.ndarray
    tol: float = field(default=1e-10, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("profile must be a nonempty 1-d sequence")
        if abs(v[0] - 1.0) > self.tol:
            raise ValueError(f"profile must start at 1, got {v[0]}")
        if v.min() < -self.tol or v.max() > 1 + self.tol:
            raise ValueError("profile values must lie in [0, 1]")
        if np.any(np.diff(v) > self.tol):
            raise ValueError("profile must be nonincreasing")
        self.values = v

    @property
    def k_max(self) -> int:
        return self.values.size - 1

    def at(self, i: int) -> float:
        """u(i), with u(i) = 0 beyond the truncation index."""
        if i < 0:
            raise IndexError(i)
        return float(self.values[i]) if i <= self.k_max else 0.0

    def padded(self, k_max: int) -> np.ndarray:
        out = np.zeros(k_max + 1)
        m = min(k_max, self.k_max) + 1
        out[:m] = self.values[:m]
        return out

    @classmethod
    def from_tail_counts(cls, tail_counts, n: int) -> "TailProfile":
        return cls(np.asarray(tail_counts, dtype=float) / n)


# -- Fenwick tree over bin loads -------------------------------------------

@numba.njit(nogil=True, cache=True)
def _fen_add(tree, j, delta):
    i = j + 1
    m = tree.shape[0]
    while i < m:
        tree[i] += delta
        i += i & (-i)


@numba.njit(nogil=True, cache=True)
def _fen_find(tree, idx):
    """Bin holding the ``idx``-th ball (0-based) and that ball's offset in it."""
    n = tree.shape[0] - 1
    step = 1
    while step * 2 <= n:
        step *= 2
    pos = 0
    rem = idx
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= rem:
            pos = nxt
            rem -= tree[nxt]
        step //= 2
    return pos, rem


@numba.njit(nogil=True, cache=True)
def _fen_build(values):
    n = values.shape[0]
    tree = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        i = j + 1
        tree[i] += values[j]
        parent = i + (i & (-i))
        if parent <= n:
            tree[parent] += tree[i]
    return tree


# -- elementary transitions -------------------------------------------------

@numba.njit(nogil=True, cache=True)
def _least_loaded(loads, choices):
    best = choices[0]
    best_load = loads[best]
    for c in range(1, choices.shape[0]):
        j = choices[c]
        if loads[j] < best_load:
            best = j
            best_load = loads[j]
    return best


@numba.njit(nogil=True, cache=True)
def _add_to_bin(loads, tails, tree, meta, b):
    h = loads[b] + 1
    loads[b] = h
    tails[h] += 1
    _fen_add(tree, b, 1)
    meta[0] += 1
    if h > meta[1]:
        meta[1] = h
    return h


@numba.njit(nogil=True, cache=True)
def _drop_from_bin(loads, tails, tree, meta, b):
    tails[loads[b]] -= 1
    loads[b] -= 1
    _fen_add(tree, b, -1)
    meta[0] -= 1
    if meta[1] > 0 and tails[meta[1]] == 0:
        meta[1] -= 1


@numba.njit(nogil=True, cache=True)
def _remove_at(loads, tails, tree, meta, idx):
    b, off = _fen_find(tree, idx)
    _drop_from_bin(loads, tails, tree, meta, b)
    return b, off + 1


@numba.njit(nogil=True, cache=True)
def _tail_counts_from_loads(loads, size):
    tails = np.zeros(size, dtype=np.int64)
    for j in range(loads.shape[0]):
        tails[loads[j]] += 1
    # suffix sums: tails[i] = #{j : loads[j] >= i}
    for i in range(size - 2, -1, -1):
        tails[i] += tails[i + 1]
    return tails


class LoadState:
    """Per-bin loads with incrementally maintained tail counts.

    ``tail_counts`` is exposed up to the current maximum load; higher indices
    are implicitly zero.  Internally the counts live in a buffer that grows
    on demand.
    """

    def __init__(self, loads, clock: float = 0.0):
        loads = np.array(loads, dtype=np.int64)
        if loads.ndim != 1 or loads.size == 0:
            raise ValueError("loads must be a nonempty 1-d sequence")
        if loads.min() < 0:
            raise ValueError("loads must be nonnegative")
        self.loads = loads
        m = int(loads.max())
        self._tails = _tail_counts_from_loads(loads, max(_TAIL_CAPACITY, 2 * m + 2))
        self._tree = _fen_build(loads)
        self._meta = np.array([int(loads.sum()), m], dtype=np.int64)
        self.clock = float(clock)

    @property
    def n(self) -> int:
        return self.loads.shape[0]

    @property
    def total(self) -> int:
        return int(self._meta[0])

    @property
    def max_load(self) -> int:
        return int(self._meta[1])

    @property
    def tail_counts(self) -> np.ndarray:
        return self._tails[: self.max_load + 1].copy()

    def profile(self) -> TailProfile:
        """Exact u(., x) of this state."""
        return TailProfile.from_tail_counts(self.tail_counts, self.n)

    def ensure_capacity(self, height: int) -> None:
        """Make room for tail counts up to ``height``."""
        if height + 1 < self._tails.shape[0]:
            return
        size = self._tails.shape[0]
        while size <= height + 1:
            size *= 2
        buf = np.zeros(size, dtype=np.int64)
        buf[: self._tails.shape[0]] = self._tails
        self._tails = buf

    def copy(self) -> "LoadState":
        out = LoadState.__new__(LoadState)
        out.loads = self.loads.copy()
        out._tails = self._tails.copy()
        out._tree = self._tree.copy()
        out._meta = self._meta.copy()
        out.clock = self.clock
        return out

    def check(self) -> None:
        """Recompute every derived quantity from ``loads`` and compare."""
        loads = self.loads
        m = int(loads.max())
        assert self.total == int(loads.sum()), "total out of sync"
        assert self.max_load == m, "max load out of sync"
        fresh = _tail_counts_from_loads(loads, self._tails.shape[0])
        assert np.array_equal(fresh, self._tails), "tail counts out of sync"
        assert np.array_equal(_fen_build(loads), self._tree), "tree out of sync"

    def __repr__(self):
        return (f"LoadState(n={self.n}, total={self.total}, "
                f"max_load={self.max_load}, clock={self.clock})")


def build_state(params: SimParams, initial_loads) -> LoadState:
    initial_loads = np.asarray(initial_loads)
    if initial_loads.shape != (params.n,):
        raise ValueError(
            f"expected {params.n} initial loads, got shape {initial_loads.shape}")
    return LoadState(initial_loads)


def place_ball(state: LoadState, choices) -> int:
    """Place one ball in the first least-loaded bin among ``choices``."""
    choices = np.asarray(choices, dtype=np.int64).reshape(-1)
    if choices.size == 0:
        raise ValueError("at least one choice is required")
    if choices.min() < 0 or choices.max() >= state.n:
        raise ValueError(f"choice out of range [0, {state.n}): {choices.tolist()}")
    b = int(_least_loaded(state.loads, choices))
    state.ensure_capacity(int(state.loads[b]) + 1)
    _add_to_bin(state.loads, state._tails, state._tree, state._meta, b)
    return b


def remove_ball(state: LoadState, ball_index: int) -> int:
    """Remove the ``ball_index``-th ball of the canonical enumeration."""
    if state.total == 0:
        raise ValueError("cannot remove a ball from an empty state")
    if not 0 <= ball_index < state.total:
        raise ValueError(f"ball index {ball_index} out of range [0, {state.total})")
    b, _ = _remove_at(state.loads, state._tails, state._tree, state._meta,
                      int(ball_index))
    return int(b)
