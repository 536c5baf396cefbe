"""Market inputs and the drift curve b(t) of the reduced Asian-option PDE.

The drift curve is the discounted trading strategy

    b(t) = c * int_t^T exp(-r (T - s) + int_s^T nu'(tau) dtau) rho(s) ds,
    c    = exp(-int_0^T nu'),

with piecewise-constant dividend density nu' and weighting density rho.
On every constant piece the integrand is a single exponential, so all
integrals below are evaluated in closed form.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_KNOTS = 1025


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step function on [0, T] given by (t_start, value) pairs."""

    starts: tuple[float, ...]
    values: tuple[float, ...]

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "PiecewiseConstant":
        if len(pairs) == 0:
            raise ValueError("density needs at least one (t_start, value) pair")
        starts = tuple(float(p[0]) for p in pairs)
        values = tuple(float(p[1]) for p in pairs)
        return cls(starts, values)

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls((0.0,), (float(value),))

    def validate(self, horizon: float) -> None:
        if self.starts[0] != 0.0:
            raise ValueError("first density piece must start at t = 0")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ValueError("density breakpoints must be strictly increasing")
        if self.starts[-1] >= horizon:
            raise ValueError("density breakpoints must lie inside [0, T)")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("density values must be finite")

    def pieces(self, horizon: float) -> list[tuple[float, float, float]]:
        ends = self.starts[1:] + (horizon,)
        return [(a, b, v) for a, b, v in zip(self.starts, ends, self.values)]

    def __call__(self, t):
        idx = np.searchsorted(np.asarray(self.starts), t, side="right") - 1
        return np.asarray(self.values)[np.clip(idx, 0, len(self.values) - 1)]

    def scaled(self, factor: float) -> "PiecewiseConstant":
        return PiecewiseConstant(self.starts, tuple(factor * v for v in self.values))


@dataclass(frozen=True)
class MarketSpec:
    rate: float
    maturity: float
    volatility: float = 1.0
    dividend_density: PiecewiseConstant = field(
        default_factory=lambda: PiecewiseConstant.constant(0.0)
    )
    weighting_density: PiecewiseConstant = field(
        default_factory=lambda: PiecewiseConstant.constant(1.0)
    )
    strike: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.maturity) and self.maturity > 0):
            raise ValueError(f"maturity must be positive, got {self.maturity}")
        if not (math.isfinite(self.rate) and self.rate >= 0):
            raise ValueError(f"rate must be nonnegative, got {self.rate}")
        if not (math.isfinite(self.volatility) and self.volatility > 0):
            raise ValueError(f"volatility must be positive, got {self.volatility}")
        if self.strike != 0.0:
            # Only the fixed-strike call (K1 = 0) reduces to b(T) = 0.
            raise ValueError("only strike = 0 (fixed-strike call) is supported")
        self.dividend_density.validate(self.maturity)
        self.weighting_density.validate(self.maturity)
        if min(self.dividend_density.values) < 0:
            raise ValueError("dividend density must be nonnegative")
        if min(self.weighting_density.values) <= 0:
            raise ValueError("weighting density must be bounded below by a positive constant")


@dataclass(frozen=True, eq=False)
class DriftCurve:
    """Piecewise-linear table of b(t) with certified slope bounds.

    ``neg_slope`` is the closed-form -b'(t) when the curve came from market
    data; curves built from raw samples carry ``None``.
    """

    knots: np.ndarray
    values: np.ndarray
    m1: float
    m2: float
    neg_slope: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise ValueError("knots and values must be 1-D arrays of equal length >= 2")
        if knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must start at 0 and be strictly increasing")
        if values[-1] != 0.0:
            raise ValueError("drift curve must vanish at maturity")
        if not (0 < self.m1 <= self.m2):
            raise ValueError(f"slope bounds must satisfy 0 < m1 <= m2, got {self.m1}, {self.m2}")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def ell(self) -> float:
        """b(0), the height of the degeneracy curve."""
        return float(self.values[0])

    @property
    def ident(self) -> str:
        h = hashlib.sha256(self.knots.tobytes() + self.values.tobytes())
        return h.hexdigest()[:12]

    def __call__(self, t):
        return eval_drift(self, t)

    def psi(self, tau):
        """Curve in reversed time, psi(tau) = b(T - tau)."""
        return eval_drift(self, self.horizon - np.asarray(tau, dtype=float))

    @classmethod
    def from_samples(cls, knots, values) -> "DriftCurve":
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        slopes = -np.diff(values) / np.diff(knots)
        return cls(knots, values, float(slopes.min()), float(slopes.max()))

    @classmethod
    def linear(cls, horizon: float = 1.0, slope: float = 1.0, n_knots: int = DEFAULT_KNOTS):
        """b(t) = slope * (T - t), the reference curve."""
        knots = np.linspace(0.0, horizon, n_knots)
        values = slope * (horizon - knots)
        values[-1] = 0.0
        return cls(knots, values, slope, slope, lambda t: np.full_like(np.asarray(t, float), slope))


def _segments(market: MarketSpec) -> list[tuple[float, float, float, float]]:
    """Merged pieces (a, b, nu', rho) over which both densities are constant."""
    T = market.maturity
    cuts = sorted(set(market.dividend_density.starts) | set(market.weighting_density.starts) | {T})
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        out.append((a, b, float(market.dividend_density(mid)), float(market.weighting_density(mid))))
    return out


def _exp_integral(kappa: float, lo: float, hi: float, anchor: float) -> float:
    """int_lo^hi exp(kappa (s - anchor)) ds, stable for small kappa."""
    width = hi - lo
    z = kappa * width
    if abs(z) < 1e-5:
        # expm1(z)/z by its series; avoids dividing by a tiny (possibly subnormal) kappa.
        ratio = 1.0 + z / 2.0 + z * z / 6.0
    else:
        ratio = math.expm1(z) / z
    return math.exp(kappa * (lo - anchor)) * width * ratio


def _tail_dividend(segments, t: float) -> float:
    """int_t^T nu'."""
    total = 0.0
    for a, b, nu, _ in segments:
        if b > t:
            total += nu * (b - max(a, t))
    return total


def _integrand_log(market: MarketSpec, segments, s: float) -> float:
    """log of exp(-r (T - s) + int_s^T nu')."""
    return -market.rate * (market.maturity - s) + _tail_dividend(segments, s)


def build_drift(market: MarketSpec, n_knots: int = DEFAULT_KNOTS) -> DriftCurve:
    if n_knots < 2:
        raise ValueError(f"n_knots must be at least 2, got {n_knots}")
    if min(market.weighting_density.values) <= 0:
        raise ValueError("weighting density must be strictly positive")
    T = market.maturity
    segments = _segments(market)
    scale = math.exp(-_tail_dividend(segments, 0.0))
    knots = np.linspace(0.0, T, n_knots)

    # Integrate between consecutive points of (knots U breakpoints), then
    # accumulate from the right so that b(T) = 0 is exact.
    points = np.union1d(knots, [s[0] for s in segments])
    pieces = np.zeros(points.size - 1)
    for i, (lo, hi) in enumerate(zip(points[:-1], points[1:])):
        mid = 0.5 * (lo + hi)
        for a, b, nu, rho in segments:
            if a <= mid < b:
                # On this piece the exponent is affine in s with slope r - nu'.
                log_at_lo = _integrand_log(market, segments, lo)
                pieces[i] = rho * math.exp(log_at_lo) * _exp_integral(market.rate - nu, lo, hi, lo)
                break
    tail = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]]) * scale
    values = tail[np.searchsorted(points, knots)]
    values[-1] = 0.0

    def neg_slope(t):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t)
        out = np.array([
            scale * math.exp(_integrand_log(market, segments, float(s))) * float(market.weighting_density(s))
            for s in flat
        ])
        return out.reshape(t.shape)

    m1, m2 = _slope_extrema(market, segments, scale)
    return DriftCurve(knots, values, m1, m2, neg_slope)


def _slope_extrema(market: MarketSpec, segments, scale: float) -> tuple[float, float]:
    # -b' is a single exponential on each piece, so its extrema over [0, T]
    # sit at piece endpoints (one-sided limits).
    samples = []
    for a, b, nu, rho in segments:
        for s in (a, b):
            samples.append(scale * math.exp(_integrand_log(market, segments, s)) * rho)
    return min(samples), max(samples)


def slope_bounds(drift: DriftCurve) -> tuple[float, float]:
    """Certified (m1, m2) with m1 <= -b'(t) <= m2 on [0, T]."""
    if drift.neg_slope is None:
        raise ValueError("slope_bounds needs a drift built from market data")
    if drift.m1 <= 0:
        raise ValueError(f"lower slope bound must be positive, got {drift.m1}")
    return drift.m1, drift.m2


def eval_drift(drift: DriftCurve, t):
    t = np.asarray(t, dtype=float)
    T = drift.horizon
    tol = 1e-12 * max(1.0, T)
    if np.any(t < -tol) or np.any(t > T + tol):
        raise ValueError(f"time outside [0, {T}]")
    out = np.interp(np.clip(t, 0.0, T), drift.knots, drift.values)
    return float(out) if out.ndim == 0 else out
