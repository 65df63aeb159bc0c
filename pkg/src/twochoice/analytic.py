"""Closed-form and numerical predictions for the tail profile and max load.

Profiles are indexed from 0: ``v[k]`` is the proportion of bins with load at
least k, so ``v[0] == 1`` always.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .core import TailProfile

__all__ = [
    "poisson_tail",
    "poisson_tails",
    "poisson_deviation_bound",
    "poisson_power_bound",
    "poisson_truncated_mean",
    "LevelPrediction",
    "d1_levels",
    "d1_max_bounds",
    "d1_level_expansion",
    "OdeSolution",
    "TruncationError",
    "ode_solve",
    "fixed_point",
    "summed_residual",
    "recurrence_bracket",
    "jstar_threshold",
    "jstar_predict",
    "jstar_sequential",
]

DEFAULT_K_MAX = 64
TAIL_EPS = 1e-14


class TruncationError(RuntimeError):
    """The truncation index is too small for the requested accuracy."""


# -- Poisson utilities ------------------------------------------------------

def _log_pmf(mu: float, k: int) -> float:
    return k * math.log(mu) - mu - math.lgamma(k + 1)


def poisson_tail(mu: float, i: int) -> float:
    """P(Po(mu) >= i).

    Below the mean the complement of the partial pmf sum is used; at or above
    it the upper tail is summed directly, which keeps tiny tails accurate.
    """
    if mu < 0:
        raise ValueError(f"Poisson mean must be nonnegative, got {mu}")
    if i <= 0:
        return 1.0
    if mu == 0:
        return 0.0
    if i <= mu:
        return max(0.0, 1.0 - sum(math.exp(_log_pmf(mu, k)) for k in range(i)))
    term = math.exp(_log_pmf(mu, i))
    total = 0.0
    k = i
    while term > 1e-18 * total or total == 0.0:
        total += term
        k += 1
        term *= mu / k
        if term == 0.0:
            break
    return min(1.0, total)


def poisson_tails(mu: float, k_max: int) -> np.ndarray:
    """Array of P(Po(mu) >= i) for i = 0..k_max."""
    return np.array([poisson_tail(mu, i) for i in range(k_max + 1)])


def poisson_deviation_bound(mu: float, eps: float) -> float:
    """Two-sided Chernoff bound 2 exp(-eps^2 mu / 3) on P(|X - mu| >= eps mu)."""
    if not 0 <= eps <= 1:
        raise ValueError("eps must lie in [0, 1]")
    return 2.0 * math.exp(-eps * eps * mu / 3.0)


def poisson_power_bound(mu: float, k: int) -> tuple[float, float]:
    """(mu^k / k!, (e mu / k)^k), both upper bounds on P(X >= k) for k >= 1."""
    if k < 1:
        raise ValueError("k must be positive")
    first = math.exp(k * math.log(mu) - math.lgamma(k + 1)) if mu > 0 else 0.0
    second = (math.e * mu / k) ** k
    return first, second


def poisson_truncated_mean(mu: float, k: int) -> float:
    """E[X 1(X >= k)] for X ~ Po(mu), by direct summation of x * pmf(x)."""
    if mu == 0:
        return 0.0
    start = max(k, 0)
    top = int(mu + 40 * math.sqrt(mu) + 60)
    return float(sum(x * math.exp(_log_pmf(mu, x)) for x in range(max(start, 1), top)))


# -- one choice ---------------------------------------------------------------

@dataclass(frozen=True)
class LevelPrediction:
    level: int
    kind: str
    threshold: float
    support: tuple = ()
    source: str = ""


def _loglog(n: float) -> float:
    if n < 16:
        raise ValueError(f"n must be at least 16 so that ln ln n > 0, got {n}")
    return math.log(math.log(n))


def d1_levels(n: float, lam: float = 1.0) -> LevelPrediction:
    """m(n): the least positive i with n * P(Po(lam) >= i+1) <= 1 / ln ln n.

    With one choice and stationary start, M is m(n) or m(n) - 1 a.a.s.
    """
    threshold = 1.0 / _loglog(n)
    i = 1
    while n * poisson_tail(lam, i + 1) > threshold:
        i += 1
    return LevelPrediction(i, "m", threshold, (i - 1, i), "poisson")


def d1_max_bounds(n: int, lam: float, i: int) -> dict:
    """Union and product bounds on the equilibrium max load for d = 1.

    ``ge_upper`` bounds P(M >= i) by n p_i; ``le_exact`` is P(M <= i) =
    (1 - p_{i+1})^n and ``le_upper`` its bound exp(-n p_{i+1}).
    """
    p_i = poisson_tail(lam, i)
    p_next = poisson_tail(lam, i + 1)
    return {
        "ge_upper": n * p_i,
        "le_exact": (1.0 - p_next) ** n,
        "le_upper": math.exp(-n * p_next),
    }


def d1_level_expansion(n: float) -> tuple[float, float]:
    """Leading and two-term asymptotic approximations of m(n). Diagnostic only."""
    ln = math.log(n)
    ll = math.log(ln)
    lead = ln / ll
    return lead, lead + ln * math.log(ll) / ll**2


# -- mean-field ODE ---------------------------------------------------------

@dataclass
class OdeSolution:
    times: np.ndarray
    profiles: np.ndarray  # shape (len(times), k_max + 1)
    d: int
    lam: float
    k_max: int
    variant: str
    rtol: float
    atol: float
    max_monotonicity_defect: float = 0.0

    def profile(self, index: int = -1) -> TailProfile:
        return TailProfile(self.profiles[index])

    def final(self) -> TailProfile:
        return self.profile(-1)


def _rhs(d: int, lam: float, variant: str, k_max: int):
    ks = np.arange(1, k_max + 1, dtype=float)

    def f(t, y):
        v = np.empty(k_max + 2)
        v[0] = 1.0
        v[1:-1] = y
        v[-1] = 0.0
        # the integrator may overshoot slightly below zero at far tails
        np.clip(v, 0.0, 1.0, out=v)
        vd = v**d
        growth = lam * (vd[:-2] - vd[1:-1])
        if variant == "sequential":
            return growth
        return growth - ks * (v[1:-1] - v[2:])

    return f


def _empty_profile(k_max: int) -> np.ndarray:
    v = np.zeros(k_max + 1)
    v[0] = 1.0
    return v


def ode_solve(d: int, lam: float, initial: TailProfile | None = None,
              t_end: float = 1.0, k_max: int | None = None,
              variant: str = "continuous", t_eval=None,
              rtol: float = 1e-12, atol: float = 1e-15) -> OdeSolution:
    """Integrate the truncated tail-profile ODE with v(t, k_max + 1) := 0.

    ``continuous`` is the arrival-death system; ``sequential`` drops the death
    term (balls thrown at rate lam * n and never removed).  When ``k_max`` is
    None it starts at 64 and doubles until the far tail stays below 1e-14; an
    explicit ``k_max`` that is too small raises ``TruncationError``.
    """
    if variant not in ("continuous", "sequential"):
        raise ValueError(f"unknown variant {variant!r}")
    if d < 1 or not lam > 0 or t_end < 0:
        raise ValueError("need d >= 1, lam > 0, t_end >= 0")
    auto = k_max is None
    k = DEFAULT_K_MAX if auto else int(k_max)
    if initial is not None:
        k = max(k, initial.k_max) if auto else k
    while True:
        v0 = _empty_profile(k) if initial is None else initial.padded(k)
        if v0[k] >= TAIL_EPS:
            if auto:
                k *= 2
                continue
            raise TruncationError(f"initial profile has mass {v0[k]:.3g} at k_max={k}")
        times = np.asarray([0.0, t_end] if t_eval is None else t_eval, dtype=float)
        if times[0] != 0.0:
            times = np.concatenate([[0.0], times])
        if t_end == 0.0 or times[-1] == 0.0:
            profiles = np.tile(v0, (len(times), 1))
        else:
            sol = solve_ivp(_rhs(d, lam, variant, k), (0.0, float(times[-1])), v0[1:],
                            method="DOP853", t_eval=times, rtol=rtol, atol=atol)
            if not sol.success:
                raise RuntimeError(f"ODE integration failed: {sol.message}")
            profiles = np.empty((len(times), k + 1))
            profiles[:, 0] = 1.0
            profiles[:, 1:] = sol.y.T
        if profiles[:, k].max() >= TAIL_EPS:
            if auto:
                k *= 2
                continue
            raise TruncationError(
                f"profile mass {profiles[:, k].max():.3g} at k_max={k} exceeds {TAIL_EPS}")
        break
    defect = max(0.0, float(np.max(np.diff(profiles, axis=1))),
                 float(-profiles.min()), float(profiles.max() - 1.0))
    if defect > 1e-10:
        raise RuntimeError(f"monotonicity defect {defect:.3g} exceeds 1e-10")
    profiles = np.minimum.accumulate(np.clip(profiles, 0.0, 1.0), axis=1)
    return OdeSolution(times, profiles, d, lam, k, variant, rtol, atol, defect)


# -- equilibrium fixed point -------------------------------------------------

def summed_residual(v: np.ndarray, d: int, lam: float) -> np.ndarray:
    """lam v(i-1)^d - i v(i) - sum_{k>i} v(k) for i = 1..k_max."""
    v = np.asarray(v, dtype=float)
    k_max = v.size - 1
    i = np.arange(1, k_max + 1)
    above = np.concatenate([np.cumsum(v[::-1])[::-1][2:], [0.0]])
    return lam * v[:-1] ** d - i * v[1:] - above


def fixed_point(d: int, lam: float, k_max: int | None = None, tol: float = 1e-13,
                damping: float = 0.5, max_sweeps: int = 200_000,
                init: np.ndarray | None = None) -> TailProfile:
    """Stationary profile of the mean-field ODE by damped Gauss-Seidel sweeps.

    Each sweep updates v(i), i = 1..k_max, towards
    clip((lam v(i-1)^d - sum_{k>i} v(k)) / i, 0, v(i-1)).
    """
    if d < 1 or not lam > 0 or not tol > 0:
        raise ValueError("need d >= 1, lam > 0, tol > 0")
    auto = k_max is None
    k = DEFAULT_K_MAX if auto else int(k_max)
    while True:
        v = _empty_profile(k) if init is None else np.asarray(init, float)[: k + 1].copy()
        if v.size < k + 1:
            v = np.concatenate([v, np.zeros(k + 1 - v.size)])
        v[0] = 1.0
        residual = np.inf
        for _ in range(max_sweeps):
            above = float(v[2:].sum())
            for i in range(1, k + 1):
                target = (lam * v[i - 1] ** d - above) / i
                target = min(max(target, 0.0), v[i - 1])
                v[i] = (1.0 - damping) * v[i] + damping * target
                if i + 1 <= k:
                    above -= v[i + 1]
            residual = float(np.max(np.abs(summed_residual(v, d, lam))))
            if residual <= tol:
                break
        else:
            raise RuntimeError(
                f"fixed point did not converge in {max_sweeps} sweeps; residual {residual:.3g}")
        if v[k] >= TAIL_EPS:
            if auto:
                k *= 2
                continue
            raise TruncationError(f"fixed point has mass {v[k]:.3g} at k_max={k}")
        return TailProfile(v)


def recurrence_bracket(u_prev: float, i: int, d: int, lam: float) -> tuple:
    """(lower, upper, lower_valid) for u(i) given u(i-1).

    lower = lam u(i-1)^d / (i+1), valid for i >= ceil(2 lam) - 1;
    upper = 2 lam u(i-1)^d / i.
    """
    if not 0 <= u_prev <= 1 or i < 1:
        raise ValueError("need 0 <= u_prev <= 1 and i >= 1")
    base = lam * u_prev**d
    return base / (i + 1), 2.0 * base / i, i >= math.ceil(2 * lam) - 1


# -- two-point predictions ----------------------------------------------------

def jstar_threshold(n: float) -> float:
    """n^(-1/2) ln^3 n."""
    return math.log(n) ** 3 / math.sqrt(n)


def _first_below(values: np.ndarray, threshold: float) -> int | None:
    for i in range(1, values.size):
        if values[i] < threshold:
            return i
    return None


def jstar_predict(n: float, d: int, lam: float = 1.0,
                  profile: TailProfile | None = None) -> LevelPrediction:
    """j*(n): least positive i with u(i) < n^(-1/2) ln^3 n.

    The profile defaults to the mean-field fixed point.  The predicted support
    of the max load is {j*, j*+1} for d = 2 and {j*-1, j*} for d >= 3.
    """
    if d < 2:
        raise ValueError("j* is defined for d >= 2; use d1_levels for d = 1")
    _loglog(n)
    threshold = jstar_threshold(n)
    source = "empirical" if profile is not None else "fixed_point"
    if profile is None:
        profile = fixed_point(d, lam)
    j = _first_below(profile.values, threshold)
    if j is None:
        raise TruncationError(
            f"profile truncated at k_max={profile.k_max} before crossing {threshold:.3g}")
    support = (j, j + 1) if d == 2 else (j - 1, j)
    return LevelPrediction(j, "j*", threshold, support, source)


def jstar_sequential(n: float, d: int, t: float = 1.0) -> LevelPrediction:
    """Sequential-throw j*: least i with v(t, i) < 2 n^(-1/2) ln n on the no-death ODE."""
    if d < 2:
        raise ValueError("need d >= 2")
    threshold = 2.0 * math.log(n) / math.sqrt(n)
    sol = ode_solve(d, 1.0, t_end=t, variant="sequential")
    j = _first_below(sol.profiles[-1], threshold)
    if j is None:
        raise TruncationError("sequential profile never crosses the threshold")
    support = (j, j + 1) if d == 2 else (j - 1, j)
    return LevelPrediction(j, "j*_sequential", threshold, support, "ode_sequential")
