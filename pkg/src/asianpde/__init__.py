"""Degenerate-PDE laboratory for fixed-strike Asian options."""

__version__ = "0.1.0"

from .strategy import DriftCurve, MarketSpec, PiecewiseConstant, build_drift, eval_drift, slope_bounds
from .sde import Payoff, PathEnsemble, estimate_u, positivity_fraction, simulate_endpoints, simulate_many
from .heatbarrier import BarrierSpec, barrier_1d, barrier_bound, barrier_nd, heat_kernel
from .pde import (BoundaryData, CoefficientField, Grid, GridSolution, ManufacturedProblem, MaximumPrincipleError,
                  convergence_order, default_grid, derivatives_at, heat_manufactured, holder_seminorm,
                  parabolic_levels, price, solve_general, solve_u2)
from .bounds import (BoundReport, GeneralFrame, RescaleFrame, check_derivative_decay, check_general_bound,
                     check_key_lemma, fit_decay_rate, frame_on_curve, general_frame, geometry, key_constants,
                     key_frame, model_problem)

__all__ = [name for name in dir() if not name.startswith("_")]
