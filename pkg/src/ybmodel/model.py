"""Discretised Yoccoz-Birkeland renewal map.

The state is the vector ``(N_0, ..., N_2p)`` of normalised fertile-female
counts over the last two years, sampled ``p`` times a year.  One year of
evolution (:func:`advance`) shifts the window by ``p`` and extends it with
freshly computed values; :func:`advance_two` does the same for two years.

Index conventions follow the reference Pascal implementation the bundled
period-2 point was computed with: lags run from ``floor(A0 p)`` to ``A1 p``
inclusive, and state coordinate ``k`` sits at calendar step ``k + 1`` when the
winter gate is evaluated.  Both are exposed on :class:`ModelParams`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels


class DomainError(ValueError):
    """A state left the positive cone or has the wrong shape."""


@dataclass(frozen=True)
class ModelParams:
    maturation_age: float = 0.18
    max_age: float = 2.0
    steps_per_year: int = 100
    fecundity_cap: float = 50.0
    decay_exponent: float = 8.25
    winter_fraction: float = 0.30
    season_slack: float = 0.0
    survival_denominator_mode: str = "2p+1"
    # Largest lag in the renewal sum; None means A1*p (the reference code).
    last_lag: int | None = None
    # Calendar position of state coordinate 0 (1 in the reference code).
    calendar_offset: int = 1

    def __post_init__(self):
        p = self.steps_per_year
        if not isinstance(p, (int, np.integer)) or p < 1:
            raise ValueError(f"steps_per_year must be a positive integer, got {p!r}")
        if self.max_age != 2:
            raise ValueError("max_age is fixed at 2 years (the state spans two years)")
        if not 0 < 2 * self.maturation_age < self.max_age:
            raise ValueError("need 0 < 2*A0 < A1")
        if not self.maturation_age + 1 < self.max_age:
            raise ValueError("need A0 + 1 < A1")
        if not self.decay_exponent > 1:
            raise ValueError("decay_exponent must exceed 1")
        if not 0 <= self.winter_fraction < 1:
            raise ValueError("winter_fraction must lie in [0, 1)")
        if self.season_slack < 0 or self.winter_fraction + self.season_slack >= 1:
            raise ValueError("season_slack must be >= 0 with rho + eps < 1")
        if self.fecundity_cap <= 0:
            raise ValueError("fecundity_cap must be positive")
        if self.survival_denominator_mode not in ("2p", "2p+1"):
            raise ValueError("survival_denominator_mode must be '2p' or '2p+1'")
        if self.maturation_steps < 1:
            raise ValueError("floor(A0*p) must be at least 1")
        if not self.maturation_steps <= self.max_lag <= 2 * p:
            raise ValueError("last_lag must lie in [floor(A0*p), 2p]")
        c0 = survival_mass(self)
        if not c0 * self.fecundity_cap > 2:
            raise ValueError(f"permanence needs c0*m0 > 2, got {c0 * self.fecundity_cap:.6g}")

    @property
    def dim(self) -> int:
        return 2 * self.steps_per_year + 1

    @property
    def maturation_steps(self) -> int:
        # guard against 0.18*100 == 18.000000000000004 style representation noise
        return int(math.floor(self.maturation_age * self.steps_per_year + 1e-9))

    @property
    def max_lag(self) -> int:
        return 2 * self.steps_per_year if self.last_lag is None else self.last_lag

    @property
    def winter_steps(self) -> int:
        return int(self.winter_fraction * self.steps_per_year)

    @cached_property
    def _tables(self) -> "_Tables":
        return _Tables(self)


class _Tables:
    """Precomputed survival and gate tables handed to the compiled kernels."""

    def __init__(self, params: ModelParams):
        p = params.steps_per_year
        self.p = p
        self.lag_lo = params.maturation_steps
        self.lag_hi = params.max_lag
        self.surv = np.array([survival(h, params) for h in range(2 * p + 1)])
        self.gate = np.array(
            [season_gate(r + params.calendar_offset, params) == 1 for r in range(p)]
        )
        self.m0 = float(params.fecundity_cap)
        self.gamma = float(params.decay_exponent)

    def args(self):
        return (self.lag_lo, self.lag_hi, self.surv, self.gate, self.p, self.m0, self.gamma)


@dataclass(frozen=True)
class DerivedBounds:
    n_max: float
    c0: float
    permanence_floor: float
    lipschitz_bound: float


def survival(h: int, params: ModelParams) -> float:
    """Probability of surviving ``h`` steps; zero outside ``[0, A1 p]``."""
    top = int(params.max_age * params.steps_per_year)
    if h < 0 or h > top:
        return 0.0
    if params.survival_denominator_mode == "2p+1":
        return 1.0 - h / (top + 1)
    return 1.0 - h / top


def season_gate(h: int, params: ModelParams) -> int:
    """Reproduction switch at absolute calendar step ``h``: 0 in winter, else 1."""
    if h % params.steps_per_year < params.winter_steps:
        return 0
    return 1


def fecundity(n: float, params: ModelParams) -> float:
    if n <= 1:
        return float(params.fecundity_cap)
    return params.fecundity_cap * n ** (-params.decay_exponent)


def survival_mass(params: ModelParams) -> float:
    """Closed form of c0 = (1/p) sum of S over one breeding season."""
    a0, a1 = params.maturation_age, params.max_age
    rho_eps = params.winter_fraction + params.season_slack
    return (1 - rho_eps) * (1 - ((1 + rho_eps) + 2 * a0) / (2 * a1))


def bounds(params: ModelParams) -> DerivedBounds:
    a0, a1 = params.maturation_age, params.max_age
    m0, gamma = params.fecundity_cap, params.decay_exponent
    n_max = m0 * (a1 - a0) ** 2 / (2 * a1)
    c0 = survival_mass(params)
    return DerivedBounds(
        n_max=n_max,
        c0=c0,
        permanence_floor=(c0 * m0 / 2) * n_max ** (1 - gamma),
        lipschitz_bound=(a1 - a0) * max(m0, m0 * (gamma - 1)),
    )


def next_component(t: int, series, params: ModelParams) -> float:
    """Value ``N_t`` from the earlier entries ``series[k] = N_k``.

    Only ``series[t - last_lag : t - floor(A0 p) + 1]`` is read.
    """
    series = np.asarray(series, dtype=float)
    lo, hi = params.maturation_steps, params.max_lag
    if t - hi < 0 or t - lo >= len(series):
        raise ValueError(
            f"N_{t} needs N_{t - hi}..N_{t - lo}; series has {len(series)} entries"
        )
    tab = params._tables
    buf = np.zeros(t + 1)
    g = np.zeros(t + 1)
    window = series[t - hi : t - lo + 1]
    buf[t - hi : t - lo + 1] = window
    for k in range(t - hi, t - lo + 1):
        g[k] = _kernels.birth_term(buf[k], tab.m0, tab.gamma)
    _kernels.fill(buf, g, t, t + 1, *tab.args())
    return float(buf[t])


def as_state(state, params: ModelParams, *, positive: bool = True) -> np.ndarray:
    x = np.array(state, dtype=float)
    if x.shape != (params.dim,):
        raise DomainError(f"state must have {params.dim} entries, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("state has non-finite entries")
    if positive and not np.all(x > 0):
        raise DomainError("state must lie in the positive cone (all entries > 0)")
    return x


def close_window(head, params: ModelParams) -> np.ndarray:
    """Complete the first ``2p`` coordinates with a computed last coordinate."""
    head = np.asarray(head, dtype=float)
    p2 = 2 * params.steps_per_year
    if head.shape[0] < p2:
        raise ValueError(f"need at least {p2} leading coordinates")
    x = np.empty(params.dim)
    x[:p2] = head[:p2]
    x[p2] = next_component(p2, x[:p2], params)
    return x


def iterate(state, params: ModelParams, n: int = 1, span: str = "two") -> np.ndarray:
    """Apply T (``span='one'``) or T^2 (``span='two'``) ``n`` times."""
    x = as_state(state, params)
    tab = params._tables
    width = params.steps_per_year * (2 if span == "two" else 1)
    buf = np.empty(params.dim + width)
    g = np.empty(params.dim + width)
    _kernels.step_inplace(x, n, width, buf, g, *tab.args())
    return x


def advance(state, params: ModelParams) -> np.ndarray:
    """One year: ``(N_0..N_2p) -> (N_p..N_3p)``."""
    return iterate(state, params, 1, span="one")


def advance_two(state, params: ModelParams) -> np.ndarray:
    """Two years: ``(N_0..N_2p) -> (N_2p..N_4p)``."""
    return iterate(state, params, 1, span="two")


def trajectory(state, params: ModelParams, years: int) -> np.ndarray:
    """The state followed by ``years * p`` freshly computed values."""
    x = as_state(state, params)
    tab = params._tables
    n = params.dim + years * params.steps_per_year
    buf = np.empty(n)
    g = np.empty(n)
    buf[: params.dim] = x
    for k in range(params.dim):
        g[k] = _kernels.birth_term(x[k], tab.m0, tab.gamma)
    _kernels.fill(buf, g, params.dim, n, *tab.args())
    return buf



def _birth_extended(v, m0, gamma):
    out = v * m0
    hi = v > 1
    out[hi] = v[hi] * (m0 * v[hi] ** (-gamma))
    return out


class _ExtendedTables:
    def __init__(self, params: ModelParams):
        ld = np.longdouble
        p = params.steps_per_year
        top = int(params.max_age * p)
        denom = ld(top + 1 if params.survival_denominator_mode == "2p+1" else top)
        self.p = p
        self.lo = params.maturation_steps
        self.hs = np.arange(self.lo, params.max_lag + 1)
        self.surv = ld(1) - self.hs.astype(ld) / denom
        self.gate = params._tables.gate
        self.m0 = ld(params.fecundity_cap)
        self.gamma = ld(params.decay_exponent)

    def fill(self, buf, g, start, stop):
        # values within one maturation gap of each other are independent
        for t0 in range(start, stop, self.lo):
            ts = np.arange(t0, min(t0 + self.lo, stop))
            src = ts[:, None] - self.hs[None, :]
            w = np.where(self.gate[src % self.p], self.surv[None, :], np.longdouble(0))
            vals = (g[src] * w).sum(axis=1) / self.p
            buf[ts] = vals
            g[ts] = _birth_extended(vals, self.m0, self.gamma)


def close_window_extended(head, params: ModelParams) -> np.ndarray:
    """:func:`close_window` carried out in extended precision."""
    tab = _ExtendedTables(params)
    p2 = 2 * params.steps_per_year
    buf = np.empty(params.dim, dtype=np.longdouble)
    buf[:p2] = np.asarray(head, dtype=np.longdouble)[:p2]
    g = np.empty_like(buf)
    g[:p2] = _birth_extended(buf[:p2], tab.m0, tab.gamma)
    tab.fill(buf, g, p2, p2 + 1)
    return buf


def iterate_extended(state, params: ModelParams, n: int = 1) -> np.ndarray:
    """T^2 applied ``n`` times in x87 extended precision (``np.longdouble``).

    Slower than :func:`iterate`; meant for perturbations below the binary64
    resolution of attractor-scale coordinates (about 1e-16).
    """
    x = np.array(state, dtype=np.longdouble)
    if x.shape != (params.dim,) or not np.all(x > 0):
        raise DomainError("state must have 2p+1 positive entries")
    tab = _ExtendedTables(params)
    dim, span = params.dim, 2 * params.steps_per_year
    buf = np.empty(dim + span, dtype=np.longdouble)
    g = np.empty(dim + span, dtype=np.longdouble)
    for _ in range(n):
        buf[:dim] = x
        g[:dim] = _birth_extended(x, tab.m0, tab.gamma)
        tab.fill(buf, g, dim, dim + span)
        x = buf[span:].copy()
    return x
