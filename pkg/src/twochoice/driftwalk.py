"""Random walks with steps in {-1, 0, +1} and a drift.

Bound calculators for the hitting and crossing estimates, an exact
absorption-probability solver, and Monte Carlo walkers to check both.
Only the homogeneous worst case (fixed step probabilities) is simulated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import solve_banded

from .engine import _generator

__all__ = [
    "WalkParams",
    "WalkEstimate",
    "bernstein_bound",
    "hitting_bound",
    "crossing_exact",
    "crossing_closed_form",
    "walk_simulate",
]


@dataclass(frozen=True)
class WalkParams:
    """Step-probability bounds ``p`` (and ``q``), crossing width ``a``,
    step budget ``m``, and start/target levels ``r0 < r1`` for hitting."""

    p: float
    q: float = 0.0
    a: int = 1
    m: int = 1
    r0: int = 0
    r1: int = 1

    def __post_init__(self):
        if self.p < 0 or self.q < 0 or self.p + self.q > 1:
            raise ValueError(f"need p, q >= 0 and p + q <= 1, got p={self.p}, q={self.q}")
        if self.a < 1 or self.m < 1:
            raise ValueError("need a >= 1 and m >= 1")
        if self.r0 >= self.r1:
            raise ValueError("need r0 < r1")

    def hitting_problems(self) -> list[str]:
        out = []
        if self.p > 1 / 3:
            out.append(f"p={self.p} exceeds 1/3")
        if self.p * self.m < 2 * (self.r1 - self.r0):
            out.append(f"p*m={self.p * self.m:g} is below 2(r1 - r0)={2 * (self.r1 - self.r0)}")
        return out

    def crossing_problems(self) -> list[str]:
        return [] if self.q > self.p else [f"need q > p, got p={self.p}, q={self.q}"]


@dataclass(frozen=True)
class WalkEstimate:
    frequency: float
    se: float
    trials: int
    mode: str


def bernstein_bound(variance: float, offset_bound: float, z: float) -> float:
    """exp(-z^2 / (2V + (2/3) b z)), bounding P(S <= E S - z)."""
    if variance < 0 or offset_bound < 0 or z < 0:
        raise ValueError("need V, b, z >= 0")
    if z == 0:
        return 1.0
    return math.exp(-z * z / (2.0 * variance + (2.0 / 3.0) * offset_bound * z))


def hitting_bound(params: WalkParams) -> float:
    """exp(-p m / 28), bounding the chance of never reaching r1 in m steps."""
    problems = params.hitting_problems()
    if problems:
        raise ValueError("hitting bound preconditions violated: " + "; ".join(problems))
    return math.exp(-params.p * params.m / 28.0)


def crossing_exact(p: float, q: float, a: int) -> float:
    """P(walk from 0 with up p, down q hits a before -1), by a tridiagonal solve.

    Unknowns are h(0..a-1) with h(-1) = 0 and h(a) = 1; holding steps cancel
    from (p + q) h(r) = p h(r+1) + q h(r-1).
    """
    if not (q > p >= 0 and p + q <= 1 and a >= 1):
        raise ValueError("need q > p >= 0, p + q <= 1, a >= 1")
    if p == 0:
        return 0.0
    size = int(a)
    ab = np.zeros((3, size))
    ab[0, 1:] = -p          # superdiagonal: h(r+1)
    ab[1, :] = p + q        # diagonal
    ab[2, :-1] = -q         # subdiagonal: h(r-1)
    rhs = np.zeros(size)
    rhs[-1] = p             # h(a) = 1 moved to the right-hand side
    h = solve_banded((1, 1), ab, rhs)
    return float(h[0])


def crossing_closed_form(p: float, q: float, a: int) -> float:
    """Gambler's-ruin value (1 - rho) / (1 - rho^(a+1)), rho = q / p."""
    if p == 0:
        return 0.0
    rho = q / p
    if rho == 1:
        return 1.0 / (a + 1)
    log_top = (a + 1) * math.log(rho)
    if log_top > 700:
        return (rho - 1.0) * math.exp(-log_top)
    return (1.0 - rho) / (1.0 - rho ** (a + 1))


@numba.njit(nogil=True, cache=True)
def _crossing_walks(up, down, a, trials, rng):
    hits = 0
    for _ in range(trials):
        r = 0
        while r != -1 and r != a:
            u = rng.random()
            if u < up:
                r += 1
            elif u < up + down:
                r -= 1
        if r == a:
            hits += 1
    return hits


@numba.njit(nogil=True, cache=True)
def _hitting_walks(up, down, r0, r1, m, trials, rng):
    misses = 0
    for _ in range(trials):
        r = r0
        reached = False
        for _ in range(m):
            u = rng.random()
            if u < up:
                r += 1
            elif u < up + down:
                r -= 1
            if r >= r1:
                reached = True
                break
        if not reached:
            misses += 1
    return misses


def walk_simulate(params: WalkParams, rng, trials: int, mode: str = "crossing"
                  ) -> WalkEstimate:
    """Monte Carlo frequency with its binomial standard error.

    ``crossing``: up p, down q from 0; frequency of reaching a before -1.
    ``hitting``: up 2p, down p from r0; frequency of missing r1 within m steps.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    gen = _generator(rng)
    if mode == "crossing":
        problems = params.crossing_problems()
        if problems:
            raise ValueError("; ".join(problems))
        count = 0 if params.p == 0 else _crossing_walks(params.p, params.q, params.a,
                                                        trials, gen)
    elif mode == "hitting":
        if 3 * params.p > 1:
            raise ValueError("hitting walk needs 3p <= 1")
        count = _hitting_walks(2 * params.p, params.p, params.r0, params.r1,
                               params.m, trials, gen)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    freq = count / trials
    return WalkEstimate(freq, math.sqrt(freq * (1 - freq) / trials), trials, mode)
