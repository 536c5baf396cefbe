import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from asianpde.strategy import (DriftCurve, MarketSpec, PiecewiseConstant, build_drift, eval_drift,
                               slope_bounds)


def quad_drift(market, t):
    """Adaptive-quadrature oracle for b(t), independent of the closed-form pieces."""
    T = market.maturity
    nu, rho = market.dividend_density, market.weighting_density
    breaks = sorted(set(nu.starts) | set(rho.starts))

    def tail_nu(s):
        return quad(lambda u: float(nu(u)), s, T, points=breaks, limit=200, epsabs=1e-14)[0] if s < T else 0.0

    c = math.exp(-tail_nu(0.0))
    integrand = lambda s: math.exp(-market.rate * (T - s) + tail_nu(s)) * float(rho(s))
    pts = [b for b in breaks if t < b < T]
    return c * quad(integrand, t, T, points=pts or None, limit=200, epsabs=1e-14, epsrel=1e-13)[0]


def test_zero_rate_gives_linear_curve():
    d = build_drift(MarketSpec(0.0, 1.0), 65)
    np.testing.assert_array_equal(d.values[-1], 0.0)
    np.testing.assert_allclose(d.values, 1 - d.knots, atol=1e-15)


def test_positive_rate_matches_quadrature():
    m = MarketSpec(0.05, 1.0)
    d = build_drift(m, 33)
    closed = (1 - np.exp(-0.05 * (1 - d.knots))) / 0.05
    np.testing.assert_allclose(d.values, closed, atol=1e-14)
    oracle = np.array([quad_drift(m, t) for t in d.knots])
    np.testing.assert_allclose(d.values, oracle, atol=1e-10)


def test_piecewise_densities_match_quadrature():
    m = MarketSpec(
        rate=0.03, maturity=2.0,
        dividend_density=PiecewiseConstant.from_pairs([(0, 0.02), (0.7, 0.05)]),
        weighting_density=PiecewiseConstant.from_pairs([(0, 1.0), (0.5, 2.5), (1.3, 0.4)]),
    )
    d = build_drift(m, 41)
    oracle = np.array([quad_drift(m, t) for t in d.knots])
    np.testing.assert_allclose(d.values, oracle, atol=1e-10)
    assert d.values[-1] == 0.0


def test_slope_bounds_examples():
    assert slope_bounds(build_drift(MarketSpec(0.0, 1.0))) == (1.0, 1.0)
    m1, m2 = slope_bounds(build_drift(MarketSpec(0.05, 1.0)))
    assert m1 == pytest.approx(math.exp(-0.05), rel=1e-15)
    assert m2 == pytest.approx(1.0, rel=1e-15)


def test_slope_bounds_scale_with_weighting():
    base = MarketSpec(0.04, 1.5, weighting_density=PiecewiseConstant.from_pairs([(0, 1.0), (0.5, 2.0)]))
    scaled = MarketSpec(0.04, 1.5, weighting_density=base.weighting_density.scaled(3.0))
    m1, m2 = slope_bounds(build_drift(base))
    s1, s2 = slope_bounds(build_drift(scaled))
    assert s1 == pytest.approx(3 * m1, rel=1e-14)
    assert s2 == pytest.approx(3 * m2, rel=1e-14)


def test_slope_bounds_need_analytic_source():
    d = DriftCurve.from_samples([0, 0.5, 1], [1, 0.5, 0])
    with pytest.raises(ValueError):
        slope_bounds(d)


def test_eval_drift_interpolation():
    d = build_drift(MarketSpec(0.05, 1.0), 9)
    assert eval_drift(d, d.knots[3]) == d.values[3]
    assert eval_drift(d, 1.0) == 0.0
    mid = 0.5 * (d.knots[2] + d.knots[3])
    assert eval_drift(d, mid) == pytest.approx(0.5 * (d.values[2] + d.values[3]), rel=1e-15)
    with pytest.raises(ValueError):
        eval_drift(d, 1.1)
    with pytest.raises(ValueError):
        eval_drift(d, -0.01)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_drift(MarketSpec(0.0, 1.0), 1)
    with pytest.raises(ValueError):
        MarketSpec(0.0, 1.0, weighting_density=PiecewiseConstant.from_pairs([(0, 1.0), (0.5, 0.0)]))
    with pytest.raises(ValueError):
        MarketSpec(0.0, 0.0)
    with pytest.raises(ValueError):
        MarketSpec(0.0, 1.0, weighting_density=PiecewiseConstant.from_pairs([(0.1, 1.0)]))


def test_refinement_changes_values_quadratically():
    m = MarketSpec(0.2, 1.0, dividend_density=PiecewiseConstant.constant(0.1))
    errs = []
    for n in (9, 17, 33):
        d = build_drift(m, n)
        mids = 0.5 * (d.knots[1:] + d.knots[:-1])
        exact = np.array([quad_drift(m, t) for t in mids])
        errs.append(np.abs(eval_drift(d, mids) - exact).max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


densities = st.lists(st.floats(0.1, 3.0), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(rate=st.floats(0.0, 0.2), horizon=st.floats(0.2, 3.0), rho=densities,
       nu=st.lists(st.floats(0.0, 0.3), min_size=1, max_size=3))
def test_knot_slopes_within_certified_bounds(rate, horizon, rho, nu):
    def pc(vals):
        return PiecewiseConstant.from_pairs([(horizon * k / len(vals), v) for k, v in enumerate(vals)])

    d = build_drift(MarketSpec(rate, horizon, dividend_density=pc(nu), weighting_density=pc(rho)), 129)
    slopes = np.diff(d.values) / np.diff(d.knots)
    assert np.all(slopes >= -d.m2 * (1 + 1e-9))
    assert np.all(slopes <= -d.m1 * (1 - 1e-9))
    assert d.values[0] > 0 and d.values[-1] == 0.0
    assert np.all(np.diff(d.values) <= 0)


@pytest.mark.parametrize("rate", [2.2250738585e-313, 1e-300, 1e-12, 1e-6])
def test_tiny_rates_match_zero_rate_limit(rate):
    d = build_drift(MarketSpec(rate, 0.5), 129)
    closed = -np.expm1(-rate * (0.5 - d.knots)) / rate if rate > 1e-200 else 0.5 - d.knots
    np.testing.assert_allclose(d.values, closed, rtol=1e-14, atol=1e-16)
    slopes = np.diff(d.values) / np.diff(d.knots)
    assert np.all(slopes <= -d.m1 * (1 - 1e-12)) and np.all(slopes >= -d.m2 * (1 + 1e-12))
