"""Rescaling frames, decay constants and numerical checks of the decay bounds.

Two settings share the machinery:

* the Asian-option curve (``RescaleFrame``): boxes C_r of half-widths r in
  time and (m1/2) r in space around a point of x = psi(t), with envelope
  N0 r^(1/2) exp(-k0 / r);
* a Lipschitz graph t = phi(x) with coefficient of order |phi(x) - t|^mu
  (``GeneralFrame``): half-widths r and r / (2 M0), envelope
  N0 r^((mu-1)/2) exp(-k0 r^(1-mu)).

Both bounds come from comparing with the heat barrier at
R = (m1 / 2c) r^(-1/2), resp. R = (1 / 2 c M0) r^((1-mu)/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .pde import Grid, GridSolution, derivatives_at

RATIO_SLACK = 0.05
MIN_NODES_ACROSS = 8


class BoundViolation(AssertionError):
    pass


@dataclass(frozen=True)
class RescaleFrame:
    t0: float
    x0: float
    r: float
    m1: float
    m2: float
    c: float
    N0: float
    k0: float

    @property
    def z0(self) -> tuple[float, float]:
        return (self.t0, self.x0)

    def envelope(self) -> float:
        return self.N0 * math.sqrt(self.r) * math.exp(-self.k0 / self.r)

    def to_unit(self, t, x):
        """The rescaling map ((t - t0) / r, (x - x0) / (c r^(3/2)))."""
        return (np.asarray(t) - self.t0) / self.r, (np.asarray(x) - self.x0) / (self.c * self.r ** 1.5)

    def from_unit(self, s, y):
        return self.t0 + self.r * np.asarray(s), self.x0 + self.c * self.r ** 1.5 * np.asarray(y)

    def unit_halfwidth(self) -> float:
        """Spatial half-width of the rescaled box Q_r, i.e. the barrier radius R."""
        return self.m1 / (2 * self.c) * self.r ** -0.5

    def rescaled_coefficient(self, psi: Callable, s, y):
        """a(s, y) = (x0 + c r^(3/2) y - psi(t0 + r s))^2 / (2 (c r)^2)."""
        t, x = self.from_unit(s, y)
        return (x - np.asarray(psi(t))) ** 2 / (2.0 * (self.c * self.r) ** 2)


@dataclass(frozen=True)
class GeneralFrame:
    n: int
    mu: float
    lam: float
    Lambda: float
    M0: float
    M1: float
    c: float
    N0: float
    k0: float

    def envelope(self, r: float) -> float:
        return self.N0 * r ** ((self.mu - 1) / 2) * math.exp(-self.k0 * r ** (1 - self.mu))

    def barrier_radius(self, r: float) -> float:
        return r ** ((1 - self.mu) / 2) / (2 * self.c * self.M0)


@dataclass(frozen=True)
class BoundReport:
    r: float
    lhs: float
    rhs: float
    ratio: float
    noise_floor: float = 0.0

    def __post_init__(self):
        for name in ("r", "lhs", "rhs", "ratio", "noise_floor"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"BoundReport.{name} must be finite and nonnegative, got {v}")

    @property
    def allowance(self) -> float:
        noise = self.noise_floor / self.rhs if self.rhs > 0 else 0.0
        return 1.0 + max(RATIO_SLACK, noise)

    @property
    def holds(self) -> bool:
        return self.ratio <= self.allowance


def key_constants(m1: float, m2: float) -> tuple[float, float, float]:
    """(c, N0, k0) for slope bounds m1 <= -b' <= m2."""
    s = m1 + 2 * m2
    return s / math.sqrt(8.0), 8 * s / (math.sqrt(math.pi) * m1), m1 * m1 / (16 * s * s)


def key_frame(m1: float, m2: float, z0: tuple[float, float], r: float,
              horizon: float | None = None, ell: float | None = None) -> RescaleFrame:
    """Frame at z0 = (t0, psi(t0)); containment in (0, T) x (0, ell) is checked when given."""
    if not (0 < m1 <= m2):
        raise ValueError("need 0 < m1 <= m2")
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    t0, x0 = z0
    if horizon is not None and not (t0 - r > 0 and t0 + r < horizon):
        raise ValueError(f"closed box at r={r} leaves (0, T) in time")
    if ell is not None and not (x0 - m1 * r / 2 > 0 and x0 + m1 * r / 2 < ell):
        raise ValueError(f"closed box at r={r} leaves (0, ell) in space")
    c, N0, k0 = key_constants(m1, m2)
    return RescaleFrame(float(t0), float(x0), float(r), m1, m2, c, N0, k0)


def frame_on_curve(drift, t0: float, r: float) -> RescaleFrame:
    """key_frame anchored on the reversed-time curve of a drift."""
    return key_frame(drift.m1, drift.m2, (t0, float(drift.psi(t0))), r, drift.horizon, drift.ell)


@dataclass(frozen=True)
class Geometry:
    C: np.ndarray
    U: np.ndarray
    U_inner: np.ndarray
    Gamma: np.ndarray


def geometry(frame: RescaleFrame, grid: Grid, curve: np.ndarray) -> Geometry:
    """Node masks of C_r, U_r, U'_r and Gamma_r; ``curve`` holds psi at each time node."""
    h = grid.h
    if frame.m1 * frame.r < MIN_NODES_ACROSS * h:
        raise ValueError(f"r={frame.r} is under-resolved: box width {frame.m1 * frame.r} < {MIN_NODES_ACROSS} h")
    T, X = np.meshgrid(grid.t, grid.x, indexing="ij")
    psi = np.asarray(curve)[:, None]
    dt = np.abs(T - frame.t0)
    dx = np.abs(X - frame.x0)
    C = (dt < frame.r) & (dx < frame.m1 * frame.r / 2)
    U = C & (X < psi)
    U_inner = U & (dx < frame.m1 * frame.r / 4)
    Gamma = C & (np.abs(X - psi) <= h / 2)
    return Geometry(C, U, U_inner, Gamma)


def _domain_mask(grid: Grid, horizon: float, ell: float) -> np.ndarray:
    T, X = np.meshgrid(grid.t, grid.x, indexing="ij")
    return (T > 0) & (T < horizon) & (X > 0) & (X < ell)


def _key_lhs(sol: GridSolution, frame: RescaleFrame) -> float:
    geo = geometry(frame, sol.grid, sol.curve)
    return float(np.abs(sol.values[geo.U_inner]).max(initial=0.0))


def check_key_lemma(sol: GridSolution, frame: RescaleFrame, ell: float | None = None,
                    reference: GridSolution | None = None) -> BoundReport:
    """Compare sup |v| over U'_r with N0 r^(1/2) exp(-k0/r) sup_D |v|.

    ``reference`` is the same problem on a 2x refined (or coarsened) grid;
    the change in the left-hand side is reported as the noise floor.
    """
    if sol.curve is None:
        raise ValueError("check_key_lemma needs a u2 solution carrying its curve")
    if ell is None:
        ell = float(np.max(sol.curve))
    lhs = _key_lhs(sol, frame)
    dmask = _domain_mask(sol.grid, sol.grid.t_end, ell)
    sup_d = float(np.abs(sol.values[dmask]).max(initial=0.0))
    rhs = frame.envelope() * sup_d
    noise = abs(lhs - _key_lhs(reference, frame)) if reference is not None else 0.0
    ratio = lhs / rhs if lhs > 0 else 0.0
    return BoundReport(frame.r, lhs, rhs, ratio, noise)


def check_derivative_decay(sol: GridSolution, frames: Sequence[RescaleFrame]):
    """q(r) = r^(3/2)|v_x| + r^3|v_xx| + r|v_t| at (t0 + r, x0), with the envelope r^(1/2) e^(-k0/r)."""
    out = []
    for fr in frames:
        vt, vx, vxx = derivatives_at(sol, (fr.t0 + fr.r, fr.x0))
        r = fr.r
        q = r ** 1.5 * abs(vx) + r ** 3 * abs(vxx) + r * abs(vt)
        out.append((r, q, math.sqrt(r) * math.exp(-fr.k0 / r)))
    return out


def general_frame(n: int, mu: float, lam: float, Lambda: float, M0: float, M1: float = 1.0) -> GeneralFrame:
    if not mu > 1:
        raise ValueError(f"mu must exceed 1, got {mu}")
    if not (0 < lam <= Lambda):
        raise ValueError("need 0 < lambda <= Lambda")
    if n < 1 or not M0 > 0 or not M1 > 0:
        raise ValueError("n, M0 and M1 must be positive")
    c = math.sqrt(Lambda) * 1.5 ** (mu / 2)
    N0 = 32 * n * c * M0 / math.sqrt(2 * math.pi)
    k0 = 1.0 / (128 * c * c * M0 * M0)
    return GeneralFrame(n, mu, lam, Lambda, M0, M1, c, N0, k0)


def general_geometry(gframe: GeneralFrame, grid: Grid, graph: np.ndarray, z0, r: float) -> Geometry:
    h = grid.h
    if r / gframe.M0 < MIN_NODES_ACROSS * h:
        raise ValueError(f"r={r} is under-resolved on this grid")
    t0, x0 = z0
    T, X = np.meshgrid(grid.t, grid.x, indexing="ij")
    phi = np.asarray(graph)[None, :]
    dx = np.abs(X - x0)
    C = (np.abs(T - t0) < r) & (dx < r / (2 * gframe.M0))
    U = C & (T > phi)
    U_inner = U & (dx < r / (4 * gframe.M0))
    Gamma = C & (np.abs(T - phi) <= grid.dt / 2)
    return Geometry(C, U, U_inner, Gamma)


def check_general_bound(sol: GridSolution, gframe: GeneralFrame, z0, r: float,
                        reference: GridSolution | None = None,
                        coef=None) -> BoundReport:
    """Compare sup |u| over U'_r with N0 r^((mu-1)/2) exp(-k0 r^(1-mu)) sup_{U_r} |u|."""
    if sol.graph is None:
        raise ValueError("check_general_bound needs a solution of a graph problem")
    if coef is not None and not coef.has_metadata:
        raise ValueError("coefficient metadata (mu, Lambda, M0, graph) missing")

    def sides(s):
        geo = general_geometry(gframe, s.grid, s.graph, z0, r)
        vals = np.abs(s.values)
        return float(vals[geo.U_inner].max(initial=0.0)), float(vals[geo.U].max(initial=0.0))

    lhs, sup_u = sides(sol)
    rhs = gframe.envelope(r) * sup_u
    noise = abs(lhs - sides(reference)[0]) if reference is not None else 0.0
    ratio = lhs / rhs if lhs > 0 else 0.0
    return BoundReport(r, lhs, rhs, ratio, noise)


def fit_decay_rate(samples: Sequence[tuple[float, float]], mu: float = 2.0,
                   noise_floor: float = 0.0, min_samples: int = 4):
    """Least-squares k in log s = intercept - k r^(1-mu).

    Samples with s <= noise_floor are dropped; returns (k_fit, intercept,
    window) where window lists the r values used.
    """
    usable = [(float(r), float(s)) for r, s in samples if s > noise_floor and s > 0]
    if len(usable) < min_samples:
        raise ValueError(f"need {min_samples} samples above the noise floor, got {len(usable)}")
    usable.sort()
    r = np.array([u[0] for u in usable])
    s = np.array([u[1] for u in usable])
    slope, intercept = np.polyfit(-(r ** (1 - mu)), np.log(s), 1)
    return float(slope), float(intercept), [float(v) for v in r]


def model_problem(mu: float, Lambda: float = 1.0, lam: float | None = None, M0: float = 1.0,
                  n_x: int = 1025, n_t: int = 1025, x_min: float = -4.0):
    """Graph problem phi(x) = M0 x on [0, 1] x [x_min, 1/M0 + 1].

    The coefficient is Lambda |phi(x) - t|^mu, or, when lam < Lambda, a
    factor oscillating between lam and Lambda times |phi(x) - t|^mu. Data:
    (-x)_+ initially, -x_min on the left edge, 0 on the right edge (which
    lies below the graph).
    """
    from .pde import BoundaryData, CoefficientField, Grid

    lam = Lambda if lam is None else lam
    if not (0 < lam <= Lambda):
        raise ValueError("need 0 < lambda <= Lambda")

    def phi(x):
        return M0 * np.asarray(x, float)

    if lam == Lambda:
        coef = CoefficientField.graph_distance(phi, mu, Lambda, M0)
    else:
        def func(t, x):
            wobble = 0.5 + 0.5 * np.sin(7.0 * np.asarray(x, float))
            return (lam + (Lambda - lam) * wobble) * np.abs(phi(x) - t) ** mu

        coef = CoefficientField(func, mu=mu, Lambda=Lambda, lam=lam, M0=M0, graph=phi,
                                name=f"graph-distance(mu={mu}, lambda={lam}, Lambda={Lambda})")
    grid = Grid(x_min, 1.0 / M0 + 1.0, n_x, n_t, 1.0)
    data = BoundaryData(lambda x: np.maximum(-np.asarray(x, float), 0.0),
                        lambda t: np.full_like(np.asarray(t, float), -x_min),
                        lambda t: np.zeros_like(np.asarray(t, float)))
    return coef, data, grid
