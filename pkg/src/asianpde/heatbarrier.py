"""Heat-kernel barrier built on the periodic interval set

    E = union_j ((4j + 1) R, (4j + 3) R),   v(t, x) = 2 int_E Phi(t, x - y) dy,

with Phi the fundamental solution of u_t = u_xx. Each interval contributes a
difference of Gaussian CDF values (variance 2t). Differences are formed from
``scipy.special.erfc`` tails on the side where they do not cancel, so small
contributions keep full relative accuracy.

On the strip |x| <= R the value lies in [0, 1]; outside it the same series
reaches up to 2, since E fills half of every period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv

# The neglected tail of the interval series is kept below this.
TAIL_TOL = 1e-13
_CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class BarrierSpec:
    R: float
    dim_n: int = 1
    truncation_J: int | None = None  # None picks J from the tail bound per point

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.dim_n < 1:
            raise ValueError("dim_n must be a positive integer")
        if self.truncation_J is not None and self.truncation_J < 1:
            raise ValueError("truncation_J must be a positive integer")


def heat_kernel(t, x):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    out = np.exp(-x * x / (4.0 * t)) / np.sqrt(4.0 * np.pi * t)
    return float(out) if out.ndim == 0 else out


def _interval_mass(lo, hi):
    """P(lo < Z < hi) for standard normal Z, lo <= hi, without cancellation."""
    s = 1.0 / math.sqrt(2.0)
    right = 0.5 * (erfc(lo * s) - erfc(hi * s))  # both tails on the right
    left = 0.5 * (erfc(-hi * s) - erfc(-lo * s))  # both tails on the left
    middle = 1.0 - 0.5 * erfc(hi * s) - 0.5 * erfc(-lo * s)
    return np.where(lo >= 0, right, np.where(hi <= 0, left, middle))


def tail_bound(R: float, t: float, x: float, J: int) -> float:
    """Upper bound on the mass of all intervals with |j| > J.

    Every such interval lies at distance >= (4J - 3) R - |x| from x (a
    conservative choice), and the barrier weight of everything beyond
    distance d on both sides is 2 * erfc(d / (2 sqrt t)).
    """
    d = (4 * J - 3) * R - abs(x)
    if d <= 0:
        return 2.0
    return float(2.0 * erfc(d / (2.0 * math.sqrt(t))))


def truncation_for(R: float, t: float, x: float) -> int:
    """Smallest J whose tail bound is below TAIL_TOL."""
    d_needed = 2.0 * math.sqrt(t) * float(erfcinv(TAIL_TOL / 2.0))
    J = max(1, math.ceil(((d_needed + abs(x)) / R + 3.0) / 4.0))
    while tail_bound(R, t, x, J) >= TAIL_TOL:
        J += 1
    return J


def _barrier_point(R: float, t: float, x: float, J: int | None) -> float:
    if J is None:
        J = truncation_for(R, t, x)
    if tail_bound(R, t, x, J) >= TAIL_TOL:
        raise RuntimeError(f"series truncation J={J} too small at t={t}, x={x}")
    j = np.arange(-J, J + 1)
    scale = 1.0 / math.sqrt(2.0 * t)
    lo = ((4 * j + 1) * R - x) * scale
    hi = ((4 * j + 3) * R - x) * scale
    # Sum smallest terms first.
    terms = np.sort(_interval_mass(lo, hi))
    return 2.0 * float(math.fsum(terms))


def barrier_1d(spec: BarrierSpec, t, x):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise ValueError("barrier needs t > 0")
    tt, xx = np.broadcast_arrays(t_arr, np.asarray(x, dtype=float))
    out = np.empty(tt.shape)
    for idx in np.ndindex(tt.shape):
        x_i = float(xx[idx])
        v = _barrier_point(spec.R, float(tt[idx]), x_i, spec.truncation_J)
        top = 1.0 if abs(x_i) <= spec.R else 2.0
        if v < -_CLAMP_TOL or v > top + _CLAMP_TOL:
            raise RuntimeError(f"barrier value {v!r} outside [0, {top:g}] at t={tt[idx]}, x={x_i}")
        out[idx] = min(max(v, 0.0), top)
    return float(out) if out.ndim == 0 else out


def barrier_nd(spec: BarrierSpec, t: float, x) -> float:
    """Sum of one-dimensional barriers at time t + 1 over the coordinates of x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.size != spec.dim_n:
        raise ValueError(f"expected {spec.dim_n} coordinates, got shape {x.shape}")
    if not t + 1.0 > 0:
        raise ValueError("barrier_nd needs t > -1")
    return float(math.fsum(barrier_1d(spec, t + 1.0, xk) for xk in x))


def barrier_bound(R: float) -> float:
    """Sup bound for v(2, x) on |x| <= R/2: (16/sqrt(2 pi)) R^-1 exp(-R^2/32)."""
    if not R > 0:
        raise ValueError("R must be positive")
    return 16.0 / math.sqrt(2.0 * math.pi) / R * math.exp(-R * R / 32.0)
