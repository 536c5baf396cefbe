"""Implicit finite-difference solvers for degenerate diffusion in one space dimension.

Everything runs forward in a parabolic time variable. For the Asian-option
problem that variable is tau = T - t, and the solver advances

    v_tau = 1/2 sigma^2 (x - psi(tau))^2 v_xx,   v(0, x) = (-x)_+,

which is u_2 (the put-like half of the split u = x + u_2) in reversed time.
Time stepping is backward Euler with the centred second difference, so each
step is a tridiagonal M-matrix solve and the discrete maximum principle holds
for any step size. Rows where the coefficient vanishes reduce to
v_new = v_old; no regularisation is applied at the degeneracy curve.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .strategy import DriftCurve

# Absolute slack for the discrete maximum principle.
MAX_PRINCIPLE_TOL = 1e-12


class MaximumPrincipleError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n_x: int
    n_t: int
    t_end: float
    t_start: float = 0.0

    def __post_init__(self):
        if self.n_x < 3 or self.n_t < 3:
            raise ValueError("grid needs n_x >= 3 and n_t >= 3")
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if not self.t_start < self.t_end:
            raise ValueError("empty time horizon")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / (self.n_t - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_t)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.x_min, self.x_max, factor * (self.n_x - 1) + 1,
                    factor * (self.n_t - 1) + 1, self.t_end, self.t_start)


def default_grid(drift: DriftCurve, n_x: int = 1025, n_t: int = 1025) -> Grid:
    """Truncated domain with far-field asymptotes v = -x (left) and v = 0 (right)."""
    ell = drift.ell
    return Grid(-max(4.0, 4.0 * ell), ell + max(2.0, 2.0 * ell), n_x, n_t, drift.horizon)


@dataclass(frozen=True)
class CoefficientField:
    """Nonnegative diffusion coefficient a(t, x), optionally of graph-distance type.

    For the graph-distance type, lam |phi(x) - t|^mu <= a <= Lam |phi(x) - t|^mu.
    """

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mu: float | None = None
    Lambda: float | None = None
    lam: float | None = None
    M0: float | None = None
    M1: float | None = None
    graph: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    def __call__(self, t, x):
        return self.func(t, x)

    @property
    def has_metadata(self) -> bool:
        return None not in (self.mu, self.Lambda, self.M0, self.graph)

    @classmethod
    def constant(cls, value: float) -> "CoefficientField":
        if value < 0:
            raise ValueError("coefficient must be nonnegative")
        return cls(lambda t, x: np.full(np.broadcast(t, x).shape, float(value)), name=f"const({value})")

    @classmethod
    def graph_distance(cls, phi, mu: float, Lambda: float = 1.0, M0: float = 1.0,
                       lam: float | None = None, M1: float | None = None) -> "CoefficientField":
        """a(t, x) = Lambda |phi(x) - t|^mu."""
        if mu <= 1:
            raise ValueError("mu must exceed 1")
        return cls(lambda t, x: Lambda * np.abs(phi(x) - t) ** mu,
                   mu=mu, Lambda=Lambda, lam=Lambda if lam is None else lam,
                   M0=M0, M1=M1, graph=phi, name=f"graph-distance(mu={mu}, Lambda={Lambda})")


@dataclass(frozen=True, eq=False)
class GridSolution:
    grid: Grid
    values: np.ndarray
    component: str  # "u2" or "general"
    source_id: str
    curve: np.ndarray | None = None  # psi(t_n) for u2
    graph: np.ndarray | None = None  # phi(x_j) for general solves
    sigma: float = 1.0
    data_min: float = 0.0
    data_max: float = 0.0

    def __post_init__(self):
        self.values.setflags(write=False)
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite values in grid solution")

    def value_at(self, t, x):
        """Bilinear interpolation of the nodal values."""
        g = self.grid
        pt = (np.asarray(t, float) - g.t_start) / g.dt
        px = (np.asarray(x, float) - g.x_min) / g.h
        if np.any(pt < -1e-9) or np.any(pt > g.n_t - 1 + 1e-9):
            raise ValueError("time outside grid")
        if np.any(px < -1e-9) or np.any(px > g.n_x - 1 + 1e-9):
            raise ValueError("space outside grid")
        n = np.clip(np.floor(pt).astype(int), 0, g.n_t - 2)
        j = np.clip(np.floor(px).astype(int), 0, g.n_x - 2)
        a = np.clip(pt - n, 0.0, 1.0)
        b = np.clip(px - j, 0.0, 1.0)
        V = self.values
        out = ((1 - a) * ((1 - b) * V[n, j] + b * V[n, j + 1])
               + a * ((1 - b) * V[n + 1, j] + b * V[n + 1, j + 1]))
        return float(out) if np.ndim(out) == 0 else out

    def to_csv(self, stream=None, header: str = "") -> str:
        buf = stream if stream is not None else io.StringIO()
        g = self.grid
        buf.write(f"# component={self.component} source={self.source_id} n_x={g.n_x} n_t={g.n_t} "
                  f"x=[{g.x_min!r},{g.x_max!r}] t=[{g.t_start!r},{g.t_end!r}]\n")
        if header:
            buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "value"])
        for n, tn in enumerate(g.t):
            for j, xj in enumerate(g.x):
                w.writerow([repr(float(tn)), repr(float(xj)), repr(float(self.values[n, j]))])
        return buf.getvalue() if stream is None else ""


def _implicit_step(prev: np.ndarray, lam: np.ndarray, fixed: np.ndarray, fixed_vals: np.ndarray):
    """Solve (I - diag(lam) D2) v = prev with identity rows where ``fixed``."""
    lam = np.where(fixed, 0.0, lam)
    # Strict diagonal dominance: 1 + 2 lam > 2 lam for every row.
    assert np.all(lam >= 0), "negative diffusion coefficient"
    rhs = np.where(fixed, fixed_vals, prev)
    # Known neighbours go to the right-hand side. Fixed rows are then fully
    # decoupled, so LAPACK's pivoting cannot mix round-off into them.
    lower = np.where(fixed[:-1], 0.0, lam[1:])  # coupling of row j+1 to node j
    upper = np.where(fixed[1:], 0.0, lam[:-1])  # coupling of row j to node j+1
    rhs[1:] += np.where(fixed[:-1], lam[1:] * fixed_vals[:-1], 0.0)
    rhs[:-1] += np.where(fixed[1:], lam[:-1] * fixed_vals[1:], 0.0)
    ab = np.zeros((3, prev.size))
    ab[1] = 1.0 + 2.0 * lam
    ab[0, 1:] = -upper
    ab[2, :-1] = -lower
    return solve_banded((1, 1), ab, rhs, overwrite_ab=True, check_finite=False)


def _check_max_principle(values, lo, hi):
    slack = MAX_PRINCIPLE_TOL
    vmin, vmax = float(values.min()), float(values.max())
    if vmin < lo - slack or vmax > hi + slack:
        raise MaximumPrincipleError(
            f"solution range [{vmin}, {vmax}] escapes data range [{lo}, {hi}]")


def solve_u2(drift: DriftCurve, grid: Grid | None = None, sigma: float = 1.0) -> GridSolution:
    """Solve for v(tau, x) = u_2(T - tau, x) with (-x)_+ initial data."""
    if grid is None:
        grid = default_grid(drift)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if abs(grid.t_end - drift.horizon) > 1e-12 * drift.horizon or grid.t_start != 0.0:
        raise ValueError("grid horizon must be [0, T]")
    if not (grid.x_min < 0.0 < drift.ell < grid.x_max):
        raise ValueError("grid must bracket the degeneracy curve: x_min < 0 < b(0) < x_max")
    x, tau = grid.x, grid.t
    h2 = grid.h ** 2
    psi = np.asarray(drift.psi(tau))
    V = np.empty((grid.n_t, grid.n_x))
    V[0] = np.maximum(-x, 0.0)
    fixed = np.zeros(grid.n_x, dtype=bool)
    fixed[[0, -1]] = True
    fixed_vals = np.zeros(grid.n_x)
    fixed_vals[0] = -grid.x_min
    for n in range(1, grid.n_t):
        lam = grid.dt * 0.5 * sigma * sigma * (x - psi[n]) ** 2 / h2
        V[n] = _implicit_step(V[n - 1], lam, fixed, fixed_vals)
    lo, hi = 0.0, -grid.x_min
    _check_max_principle(V, lo, hi)
    return GridSolution(grid, V, "u2", drift.ident, curve=psi, sigma=sigma, data_min=lo, data_max=hi)


def price(drift: DriftCurve, t: float, x: float, grid: Grid | None = None, sigma: float = 1.0,
          solution: GridSolution | None = None) -> tuple[float, float]:
    """Return (u, u2) at original time t with u = x + u2."""
    sol = solution if solution is not None else solve_u2(drift, grid, sigma)
    u2 = sol.value_at(drift.horizon - t, x)
    return x + u2, u2


@dataclass(frozen=True)
class BoundaryData:
    initial: Callable[[np.ndarray], np.ndarray]
    left: Callable[[np.ndarray], np.ndarray]
    right: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def from_exact(cls, exact: Callable, grid: Grid) -> "BoundaryData":
        return cls(lambda x: exact(grid.t_start, x),
                   lambda t: exact(t, grid.x_min),
                   lambda t: exact(t, grid.x_max))


def _graph_table(graph, grid: Grid, M0: float | None) -> np.ndarray | None:
    if graph is None:
        return None
    x = grid.x
    table = np.asarray(graph(x) if callable(graph) else graph, dtype=float)
    if table.shape != x.shape:
        raise ValueError("graph table must have one value per spatial node")
    if M0 is not None:
        slopes = np.abs(np.diff(table)) / grid.h
        if slopes.max() > M0 * (1 + 1e-9):
            raise ValueError(f"graph slope {slopes.max()} exceeds declared Lipschitz bound {M0}")
    return table


def solve_general(coef: CoefficientField, data: BoundaryData, grid: Grid,
                  graph=None) -> GridSolution:
    """Implicit solve of u_t = a u_xx on {t > phi(x)} with u = 0 on and below the graph.

    ``graph`` is a callable phi or a table over the spatial nodes; by default
    the coefficient's own graph is used. Without a graph the whole box is
    active. Initial data applies where t_start >= phi(x).
    """
    if graph is None:
        graph = coef.graph
    phi = _graph_table(graph, grid, coef.M0)
    x, t = grid.x, grid.t
    h2 = grid.h ** 2
    V = np.empty((grid.n_t, grid.n_x))
    init = np.asarray(data.initial(x), dtype=float) * np.ones_like(x)
    if phi is not None:
        init = np.where(grid.t_start >= phi, init, 0.0)
    V[0] = init
    left = np.asarray(data.left(t), dtype=float) * np.ones_like(t)
    right = np.asarray(data.right(t), dtype=float) * np.ones_like(t)
    lo = min(init.min(), left[1:].min(), right[1:].min())
    hi = max(init.max(), left[1:].max(), right[1:].max())
    if phi is not None:
        lo, hi = min(lo, 0.0), max(hi, 0.0)
    edge = np.zeros(grid.n_x, dtype=bool)
    edge[[0, -1]] = True
    for n in range(1, grid.n_t):
        a = np.asarray(coef(t[n], x), dtype=float) * np.ones_like(x)
        if np.any(a < 0):
            raise ValueError("diffusion coefficient must be nonnegative")
        fixed = edge.copy()
        fixed_vals = np.zeros(grid.n_x)
        fixed_vals[0], fixed_vals[-1] = left[n], right[n]
        if phi is not None:
            dead = t[n] <= phi
            fixed |= dead
            fixed_vals[dead] = 0.0
        V[n] = _implicit_step(V[n - 1], grid.dt * a / h2, fixed, fixed_vals)
    _check_max_principle(V, lo, hi)
    return GridSolution(grid, V, "general", coef.name, graph=phi, data_min=lo, data_max=hi)


def derivatives_at(sol: GridSolution, z: tuple[float, float]) -> tuple[float, float, float]:
    """Centred second-order differences (v_t, v_x, v_xx), bilinearly interpolated to z."""
    g = sol.grid
    t, x = z
    pt = (t - g.t_start) / g.dt
    px = (x - g.x_min) / g.h
    if pt < 2 - 1e-9 or pt > g.n_t - 3 + 1e-9 or px < 2 - 1e-9 or px > g.n_x - 3 + 1e-9:
        raise ValueError("probe point must be at least two nodes inside the grid")
    n = min(int(math.floor(pt + 1e-9)), g.n_t - 4)
    j = min(int(math.floor(px + 1e-9)), g.n_x - 4)
    a = min(max(pt - n, 0.0), 1.0)
    b = min(max(px - j, 0.0), 1.0)
    V = sol.values
    rows = slice(n, n + 2)
    cols = slice(j, j + 2)
    vt = (V[n + 1:n + 3, cols] - V[n - 1:n + 1, cols]) / (2 * g.dt)
    vx = (V[rows, j + 1:j + 3] - V[rows, j - 1:j + 1]) / (2 * g.h)
    vxx = (V[rows, j + 1:j + 3] - 2 * V[rows, cols] + V[rows, j - 1:j + 1]) / g.h ** 2

    def blend(block):
        return float((1 - a) * ((1 - b) * block[0, 0] + b * block[0, 1])
                     + a * ((1 - b) * block[1, 0] + b * block[1, 1]))

    return blend(vt), blend(vx), blend(vxx)


def holder_seminorm(sol: GridSolution, subbox: tuple[float, float, float, float], alpha: float,
                    n_pairs: int = 20000, seed: int = 0) -> float:
    """Sampled lower estimate of the parabolic Hoelder seminorm over a subbox.

    ``subbox`` is (t_lo, t_hi, x_lo, x_hi). Half the pairs share a time row,
    a quarter share a spatial column and the rest are unrestricted.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    t_lo, t_hi, x_lo, x_hi = subbox
    if not (t_lo < t_hi and x_lo < x_hi):
        raise ValueError("degenerate subbox: need t_lo < t_hi and x_lo < x_hi")
    g = sol.grid
    ti = np.nonzero((g.t >= t_lo - 1e-12) & (g.t <= t_hi + 1e-12))[0]
    xi = np.nonzero((g.x >= x_lo - 1e-12) & (g.x <= x_hi + 1e-12))[0]
    if t_lo < g.t_start - 1e-12 or t_hi > g.t_end + 1e-12 or x_lo < g.x_min - 1e-12 or x_hi > g.x_max + 1e-12:
        raise ValueError("subbox must lie inside the grid")
    if ti.size * xi.size < 2 or (ti.size < 2 and xi.size < 2):
        raise ValueError("degenerate subbox")
    rng = np.random.default_rng(seed)
    n1 = rng.integers(0, ti.size, n_pairs)
    j1 = rng.integers(0, xi.size, n_pairs)
    n2 = rng.integers(0, ti.size, n_pairs)
    j2 = rng.integers(0, xi.size, n_pairs)
    kind = np.arange(n_pairs) % 4
    n2 = np.where(kind < 2, n1, n2)
    j2 = np.where(kind == 2, j1, j2)
    T1, X1 = g.t[ti[n1]], g.x[xi[j1]]
    T2, X2 = g.t[ti[n2]], g.x[xi[j2]]
    dist = np.maximum(np.sqrt(np.abs(T1 - T2)), np.abs(X1 - X2))
    keep = dist > 0
    if not np.any(keep):
        return 0.0
    diff = np.abs(sol.values[ti[n1], xi[j1]] - sol.values[ti[n2], xi[j2]])
    return float(np.max(diff[keep] / dist[keep] ** alpha))


@dataclass(frozen=True)
class ManufacturedProblem:
    """Box problem with boundary data taken from a known solution."""

    coef: CoefficientField
    exact: Callable[[np.ndarray, np.ndarray], np.ndarray]
    x_min: float
    x_max: float
    t_start: float
    t_end: float
    graph: Callable | None = None
    probes: Sequence[tuple[float, float]] | None = None

    def grid(self, n_x: int, n_t: int) -> Grid:
        return Grid(self.x_min, self.x_max, n_x, n_t, self.t_end, self.t_start)

    def solve(self, n_x: int, n_t: int) -> GridSolution:
        g = self.grid(n_x, n_t)
        return solve_general(self.coef, BoundaryData.from_exact(self.exact, g), g, self.graph)


@dataclass
class ConvergenceResult:
    hs: list[float]
    errors: list[float]
    order: float
    monotone: bool = True
    solutions: list[GridSolution] = field(default_factory=list, repr=False)

    @property
    def exact(self) -> bool:
        return math.isinf(self.order)


EXACT_ERROR = 1e-13


def convergence_order(problem: ManufacturedProblem, refinements: Sequence[tuple[int, int]],
                      use_exact: bool = True) -> ConvergenceResult:
    """Least-squares slope of log(error) against log(h) over refinement levels.

    ``refinements`` are (n_x, n_t) pairs. Errors are max-norm deviations at
    the probe points from the exact solution, or from the finest level when
    ``use_exact`` is False (the finest level is then excluded from the fit).
    """
    if len(refinements) < 3:
        raise ValueError("need at least three refinement levels")
    if len(set(refinements)) != len(refinements) or len({r[0] for r in refinements}) != len(refinements):
        raise ValueError("refinement levels must be distinct")
    levels = sorted(refinements)
    sols = [problem.solve(nx, nt) for nx, nt in levels]
    probes = problem.probes
    if probes is None:
        xs = np.linspace(problem.x_min, problem.x_max, 10)[1:-1]
        probes = [(problem.t_end, float(x)) for x in xs]
    pt = np.array([p[0] for p in probes])
    px = np.array([p[1] for p in probes])
    if use_exact:
        ref = np.asarray(problem.exact(pt, px), dtype=float)
        fit = sols
    else:
        ref = sols[-1].value_at(pt, px)
        fit = sols[:-1]
    hs = [s.grid.h for s in fit]
    errs = [float(np.max(np.abs(s.value_at(pt, px) - ref))) for s in fit]
    if max(errs) <= EXACT_ERROR:
        return ConvergenceResult(hs, errs, math.inf, True, sols)
    monotone = all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
    if not monotone:
        warnings.warn(f"errors are not decreasing under refinement: {errs}", RuntimeWarning)
    slope = np.polyfit(np.log(hs), np.log(np.maximum(errs, 1e-300)), 1)[0]
    return ConvergenceResult(hs, errs, float(slope), monotone, sols)


def heat_manufactured(x_min: float = -2.0, x_max: float = 2.0, t_start: float = 0.0,
                      t_end: float = 0.5, shift: float = 0.5) -> ManufacturedProblem:
    """a = 1 with the exact solution Phi(t + shift, x) of u_t = u_xx."""

    def exact(t, x):
        s = np.asarray(t, float) + shift
        return np.exp(-np.asarray(x, float) ** 2 / (4 * s)) / np.sqrt(4 * np.pi * s)

    return ManufacturedProblem(CoefficientField.constant(1.0), exact, x_min, x_max, t_start, t_end)


def parabolic_levels(base_nx: int, count: int, base_nt: int) -> list[tuple[int, int]]:
    """Nested levels with h halved and dt quartered each time (dt ~ h^2)."""
    return [((base_nx - 1) * 2 ** k + 1, (base_nt - 1) * 4 ** k + 1) for k in range(count)]
