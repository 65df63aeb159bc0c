"""Estimators and experiment analyses over simulated samples.

Most functions accept either a ``RunRecord``, a sequence of ``LoadState`` or
``Snapshot`` objects, or a 2-d array of load vectors (one row per sample).
Standard errors of time-series means are inflated by sqrt((1+r)/(1-r)) where
r is the lag-1 sample autocorrelation floored at 0.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats as sps

from .core import LoadState, RandomSource, SimParams, TailProfile
from .engine import RunRecord, Snapshot, map_trials, simulate_until

__all__ = [
    "corrected_se",
    "empirical_profile",
    "balance_residual",
    "MaxLoadDistribution",
    "maxload_distribution",
    "best_pair",
    "tv_estimate",
    "poisson_partition_tv",
    "ChaosResult",
    "chaoticity_experiment",
    "chaos_noise_floor",
    "MixingCurve",
    "mixing_curve",
    "interval_extrema",
    "ExactStationary",
    "exact_stationary",
]


# -- sample plumbing ----------------------------------------------------------

def _tails_from_loads(loads: np.ndarray, k_max: int | None = None) -> np.ndarray:
    loads = np.asarray(loads, dtype=np.int64)
    top = int(loads.max()) if loads.size else 0
    k_max = top if k_max is None else k_max
    counts = np.zeros((loads.shape[0], max(k_max, top) + 2), dtype=np.int64)
    for r in range(loads.shape[0]):
        counts[r, : top + 1] = np.bincount(loads[r], minlength=top + 1)
    tails = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1]
    return tails[:, : k_max + 1] / loads.shape[1]


def _tail_rows(samples, k_max: int | None = None) -> np.ndarray:
    """Matrix of u(i, X) per sample, i = 0..k_max."""
    if isinstance(samples, RunRecord):
        if len(samples) == 0:
            raise ValueError("no samples")
        return samples.tail_matrix(k_max)
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        if samples.shape[0] == 0:
            raise ValueError("no samples")
        return _tails_from_loads(samples, k_max)
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    rows = []
    n = None
    for s in samples:
        if isinstance(s, LoadState):
            tc, size = s.tail_counts, s.n
        elif isinstance(s, Snapshot):
            tc, size = s.tail_counts, int(s.tail_counts[0])
        else:
            raise TypeError(f"unsupported sample type {type(s)}")
        if n is not None and size != n:
            raise ValueError("all samples must have the same n")
        n = size
        rows.append(np.asarray(tc))
    if k_max is None:
        k_max = max(len(r) for r in rows) - 1
    out = np.zeros((len(rows), k_max + 1))
    for j, r in enumerate(rows):
        m = min(len(r), k_max + 1)
        out[j, :m] = r[:m]
    return out / n


def _lag1(x: np.ndarray) -> float:
    if x.size < 3:
        return 0.0
    c = x - x.mean()
    denom = float(np.dot(c, c))
    if denom == 0.0:
        return 0.0
    return max(0.0, float(np.dot(c[:-1], c[1:]) / denom))


def corrected_se(x) -> float:
    """Standard error of the mean of a weakly dependent series."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 0.0
    rho = min(_lag1(x), 0.999)
    return float(x.std(ddof=1) / math.sqrt(x.size) * math.sqrt((1 + rho) / (1 - rho)))


# -- profiles and balance equation -------------------------------------------

def empirical_profile(samples, k_max: int | None = None) -> tuple[TailProfile, np.ndarray]:
    """Mean occupancy profile over samples, with corrected standard errors."""
    rows = _tail_rows(samples, k_max)
    se = np.array([corrected_se(rows[:, i]) for i in range(rows.shape[1])])
    return TailProfile(rows.mean(axis=0)), se


def balance_residual(samples, i: int, d: int, lam: float, weights=None
                     ) -> tuple[float, float]:
    """Estimate lam E[u(i-1, X)^d] - i u(i) - sum_{k>i} u(k), zero in equilibrium.

    With ``weights`` the samples are treated as the atoms of an exact
    distribution and the returned standard error is 0.
    """
    if i < 1:
        raise ValueError("i must be positive")
    rows = _tail_rows(samples)
    if rows.shape[1] < i + 2:
        rows = np.pad(rows, ((0, 0), (0, i + 2 - rows.shape[1])))
    per_sample = lam * rows[:, i - 1] ** d - i * rows[:, i] - rows[:, i + 1:].sum(axis=1)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        return float(np.dot(w, per_sample) / w.sum()), 0.0
    return float(per_sample.mean()), corrected_se(per_sample)


# -- maximum load ------------------------------------------------------------

@dataclass(frozen=True)
class MaxLoadDistribution:
    masses: dict
    best_pair: tuple
    pair_mass: float
    count: int

    def mass(self, values) -> float:
        return float(sum(self.masses.get(v, 0.0) for v in values))


def best_pair(masses: Mapping[int, float]) -> tuple[tuple, float]:
    """Consecutive pair (k, k+1) with the largest combined mass; lowest k on ties."""
    if not masses:
        raise ValueError("empty mass function")
    best, best_mass = None, -1.0
    for k in range(min(masses), max(masses) + 1):
        m = masses.get(k, 0.0) + masses.get(k + 1, 0.0)
        if m > best_mass + 1e-15:
            best, best_mass = (k, k + 1), m
    return best, float(best_mass)


def maxload_distribution(samples) -> MaxLoadDistribution:
    """Empirical law of the max load across snapshots."""
    if isinstance(samples, RunRecord):
        values = samples.max_loads
    elif isinstance(samples, np.ndarray) and samples.ndim == 2:
        values = samples.max(axis=1)
    else:
        values = [s.max_load if hasattr(s, "max_load") else int(s) for s in samples]
    values = np.asarray(values, dtype=np.int64)
    if values.size == 0:
        raise ValueError("no samples")
    uniq, counts = np.unique(values, return_counts=True)
    masses = {int(k): float(c / values.size) for k, c in zip(uniq, counts)}
    pair, mass = best_pair(masses)
    return MaxLoadDistribution(masses, pair, mass, int(values.size))


# -- total variation -----------------------------------------------------------

def _as_mass_vector(h, support):
    if isinstance(h, Mapping):
        return np.array([float(h.get(k, 0.0)) for k in support])
    return np.asarray(h, dtype=float)


def tv_estimate(hist_a, hist_b) -> float:
    """Half the L1 distance between two mass functions (dicts or aligned arrays)."""
    if isinstance(hist_a, Mapping) or isinstance(hist_b, Mapping):
        support = sorted(set(dict(hist_a)) | set(dict(hist_b)))
        a, b = _as_mass_vector(hist_a, support), _as_mass_vector(hist_b, support)
    else:
        a, b = np.asarray(hist_a, float), np.asarray(hist_b, float)
        if a.shape != b.shape:
            raise ValueError("arrays must share a support")
    for name, h in (("first", a), ("second", b)):
        if h.min() < 0 or abs(h.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} histogram is not a probability mass function")
    return 0.5 * float(np.abs(a - b).sum())


def _poisson_partition(mu: float, n_bins: int, outer: float) -> np.ndarray:
    """Integer cut points: tails of mass ``outer`` plus ~equiprobable central bins."""
    lo = sps.poisson.ppf(outer, mu)
    hi = sps.poisson.isf(outer, mu)
    inner = sps.poisson.ppf(np.arange(1, n_bins) / n_bins, mu)
    return np.unique(np.concatenate([[lo], inner, [hi + 1]])).astype(np.int64)


def poisson_partition_tv(values, mu: float, n_bins: int = 20, outer: float = 1e-12,
                         rng=None, floor_reps: int = 20) -> tuple[float, float]:
    """TV between the empirical law of ``values`` and Po(mu) on a finite partition.

    The partition has two outer cells of Poisson mass ``outer`` and about
    ``n_bins`` equiprobable cells in between.  Coarsening can only lower TV,
    so this is a lower bound for the TV of the underlying laws.  Returns
    (tv, noise_floor), the floor being the mean of the same statistic on
    Po(mu) samples of equal size.
    """
    values = np.asarray(values)
    cuts = _poisson_partition(mu, n_bins, outer)
    cdf = sps.poisson.cdf(cuts - 1, mu)
    probs = np.diff(np.concatenate([[0.0], cdf, [1.0]]))

    def stat(x):
        cells = np.searchsorted(cuts, x, side="right")
        emp = np.bincount(cells, minlength=probs.size) / x.size
        return 0.5 * float(np.abs(emp - probs).sum())

    tv = stat(values)
    floor = 0.0
    if rng is not None and floor_reps > 0:
        gen = rng.generator if isinstance(rng, RandomSource) else rng
        floor = float(np.mean([stat(gen.poisson(mu, values.size))
                               for _ in range(floor_reps)]))
    return tv, floor


# -- chaoticity ------------------------------------------------------------------

@dataclass(frozen=True)
class ChaosResult:
    tv: float
    truncation_mass: float
    tuples: int
    r: int
    k_cut: int


def _loads_matrix(samples) -> np.ndarray:
    if isinstance(samples, RunRecord):
        if samples.loads is None:
            raise ValueError("snapshots lack full load vectors; sample with full_vectors=True")
        return samples.loads
    arr = np.asarray(samples)
    if arr.ndim != 2:
        raise ValueError("expected a 2-d array of load vectors")
    return arr


def _tuples(loads: np.ndarray, r: int, pooled: bool) -> np.ndarray:
    n = loads.shape[1]
    if r < 2 or r > n:
        raise ValueError(f"need 2 <= r <= n, got r={r}, n={n}")
    if pooled:
        blocks = n // r
        return loads[:, : blocks * r].reshape(-1, r)
    return loads[:, :r]


def _joint_vs_product(tuples: np.ndarray, k_cut: int) -> float:
    r = tuples.shape[1]
    base = k_cut + 1
    capped = np.minimum(tuples, k_cut)
    codes = np.zeros(capped.shape[0], dtype=np.int64)
    for s in range(r):
        codes = codes * base + capped[:, s]
    joint = np.bincount(codes, minlength=base**r) / capped.shape[0]
    product = np.ones(1)
    for s in range(r):
        marginal = np.bincount(capped[:, s], minlength=base) / capped.shape[0]
        product = np.outer(product, marginal).ravel()
    return 0.5 * float(np.abs(joint - product).sum())


def chaoticity_experiment(samples, r: int = 2, k_cut: int = 10, pooled: bool = True
                          ) -> ChaosResult:
    """TV between the joint law of r bins and the product of their marginals.

    With ``pooled`` every disjoint block of r consecutive bins contributes a
    tuple; by exchangeability each block has the law of bins 0..r-1.  Loads
    at or above ``k_cut`` are lumped into one cell, and the share of tuples
    touching that cell is reported as the truncation mass.
    """
    loads = _loads_matrix(samples)
    tuples = _tuples(loads, r, pooled)
    trunc = float(np.mean(np.any(tuples >= k_cut, axis=1)))
    return ChaosResult(_joint_vs_product(tuples, k_cut), trunc, int(tuples.shape[0]),
                       int(r), int(k_cut))


def chaos_noise_floor(samples, rng, r: int = 2, k_cut: int = 10, pooled: bool = True,
                      reps: int = 20) -> tuple[float, float]:
    """Mean and sd of the joint-vs-product TV on independent synthetic tuples.

    Each coordinate is resampled from the pooled empirical marginal, with as
    many tuples as the real data, so the true TV of the synthetic law is 0.
    """
    loads = _loads_matrix(samples)
    tuples = np.minimum(_tuples(loads, r, pooled), k_cut)
    gen = rng.generator if isinstance(rng, RandomSource) else rng
    marginal = np.bincount(tuples.ravel(), minlength=k_cut + 1) / tuples.size
    vals = []
    for _ in range(reps):
        fake = gen.choice(k_cut + 1, size=tuples.shape, p=marginal)
        vals.append(_joint_vs_product(fake, k_cut))
    return float(np.mean(vals)), float(np.std(vals, ddof=1)) if reps > 1 else 0.0


# -- mixing from the empty state ----------------------------------------------------

@dataclass
class MixingCurve:
    times: np.ndarray
    mean_total: np.ndarray
    se: np.ndarray
    predicted: np.ndarray
    tv: np.ndarray
    noise_floor: np.ndarray
    trials: int
    totals: np.ndarray  # shape (trials, len(times))


def mixing_curve(params: SimParams, t_grid, trials: int, rng: RandomSource,
                 threads: int | None = None, n_bins: int = 20) -> MixingCurve:
    """Total load from the empty state against lam n (1 - e^-t) and Po(lam n)."""
    t_grid = np.asarray(sorted(t_grid), dtype=float)

    def run(k, src):
        state = LoadState(np.zeros(params.n, dtype=np.int64))
        rec = simulate_until(state, src, params, float(t_grid[-1]), t_grid)
        return rec.totals

    totals = np.array(map_trials(run, rng, trials, threads), dtype=np.int64)
    mean = totals.mean(axis=0)
    se = totals.std(axis=0, ddof=1) / math.sqrt(trials) if trials > 1 else np.zeros(len(t_grid))
    mu = params.arrival_rate
    floor_rng = rng.substream(2**31)
    tv, floor = zip(*(poisson_partition_tv(totals[:, g], mu, n_bins, rng=floor_rng)
                      for g in range(len(t_grid))))
    return MixingCurve(t_grid, mean, se, mu * (1 - np.exp(-t_grid)), np.array(tv),
                       np.array(floor), int(trials), totals)


# -- interval extrema -----------------------------------------------------------------

def interval_extrema(record: RunRecord, window) -> tuple[int, int]:
    """Exact min and max of the max load over [t0, t1] from a tracked trajectory."""
    if record.max_path is None:
        raise ValueError("trajectory was not recorded with track_max=True")
    t0, t1 = float(window[0]), float(window[1])
    if t0 > t1 or t0 < record.t_start or t1 > record.t_end:
        raise ValueError(f"window [{t0}, {t1}] outside trajectory "
                         f"[{record.t_start}, {record.t_end}]")
    times, values = record.max_path
    start = int(np.searchsorted(times, t0, side="right")) - 1
    stop = int(np.searchsorted(times, t1, side="right"))
    seg = values[max(start, 0): stop]
    return int(seg.min()), int(seg.max())


# -- brute-force stationary law for tiny systems --------------------------------------------

@dataclass
class ExactStationary:
    states: np.ndarray  # one load vector per row
    pi: np.ndarray
    truncation_error: float
    cap: int
    d: int
    lam: float


def exact_stationary(n: int, d: int, lam: float, cap: int) -> ExactStationary:
    """Stationary law of the n-bin chain with loads capped at ``cap``.

    An arrival whose chosen bin is already at the cap is dropped.  This only
    happens when all d chosen bins are at the cap, so the balance residual of
    the capped law equals ``truncation_error`` = lam E[u(cap, X)^d] exactly.
    """
    states = np.array(list(itertools.product(range(cap + 1), repeat=n)), dtype=np.int64)
    index = {tuple(s): k for k, s in enumerate(states)}
    size = len(states)
    q = np.zeros((size, size))
    choice_weight = 1.0 / n**d
    for k, s in enumerate(states):
        for choices in itertools.product(range(n), repeat=d):
            best = choices[0]
            for j in choices[1:]:
                if s[j] < s[best]:
                    best = j
            if s[best] < cap:
                t = s.copy()
                t[best] += 1
                q[k, index[tuple(t)]] += lam * n * choice_weight
        for j in range(n):
            if s[j] > 0:
                t = s.copy()
                t[j] -= 1
                q[k, index[tuple(t)]] += s[j]
        q[k, k] = -q[k].sum()
    a = np.vstack([q.T, np.ones(size)])
    b = np.zeros(size + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(a, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    at_cap = (states >= cap).mean(axis=1)
    trunc = lam * float(np.dot(pi, at_cap**d))
    return ExactStationary(states, pi, trunc, cap, d, lam)
