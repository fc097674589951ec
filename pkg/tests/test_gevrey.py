import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zkflat import jets
from zkflat.gevrey import (BumpParams, borel_interpolate, bump, bump_deriv, fitted_growth, gevrey_fit,
                           interpolant_deriv, step_deriv)
from zkflat.jets import Jet

BP = BumpParams(s=1.6, M=1.0)


def _mp_bump(rho, s=1.6, M=1.0):
    sig = 1 / (mp.mpf(s) - 1)
    a = mp.exp(-M / (1 - rho) ** sig)
    b = mp.exp(-M / rho**sig)
    return a / (a + b)


@pytest.mark.parametrize("rho", [0.2, 0.5, 0.8])
def test_bump_derivatives_match_mpmath(rho):
    mp.mp.dps = 50
    refs = [float(mp.diff(_mp_bump, mp.mpf(rho), k)) for k in range(7)]
    scale = max(abs(v) for v in refs)
    for k, ref in enumerate(refs):
        assert abs(bump_deriv(BP, rho, k) - ref) <= 1e-13 * scale


def test_bump_plateaus():
    assert bump(BP, -0.3) == 1.0 and bump(BP, 0.0) == 1.0
    assert bump(BP, 1.0) == 0.0 and bump(BP, 1.7) == 0.0
    assert bump_deriv(BP, np.array([-0.5, 1.5]), 3).tolist() == [0.0, 0.0]


@given(st.floats(0.0, 1.0))
def test_partition_identity(rho):
    assert abs(bump(BP, rho) + bump(BP, 1.0 - rho) - 1.0) <= 1e-14


@given(st.floats(0.05, 0.95), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_step_derivative_scales_with_interval(t, n):
    wide = BumpParams(s=1.6, M=1.0, tau=0.0, T=1.0)
    narrow = BumpParams(s=1.6, M=1.0, tau=0.0, T=0.5)
    assert step_deriv(narrow, t / 2, n) == pytest.approx(2.0**n * step_deriv(wide, t, n), rel=1e-12, abs=1e-300)


def test_gevrey_fit_recovers_order_roughly():
    fit = gevrey_fit(BP, range(4, 16), np.linspace(0.01, 0.99, 400))
    assert fit["C"] > 0 and fit["R"] > 0
    assert len(fit["sup"]) == 12


def test_invalid_bump_parameters():
    for kw in ({"s": 1.0}, {"s": 2.0}, {"M": 0.0}, {"tau": 1.0, "T": 1.0}):
        with pytest.raises(ValueError):
            BumpParams(**kw)


def test_interpolant_matches_derivatives_at_anchor():
    d = np.array([(-1) ** q * 0.3**q * math.factorial(2 * q) / 4**q for q in range(11)])
    H = 0.3 / 4
    f = borel_interpolate(d, H, 1.25 * math.exp(1 / math.e) * H, anchor=1.0)
    for q in range(11):
        assert interpolant_deriv(f, 1.0, q) == pytest.approx(d[q], rel=1e-12, abs=1e-12)
    assert f(1.0 + 2 * f.support_radius()) == 0.0
    assert fitted_growth(f, np.linspace(0.9, 1.1, 41), 6) > 0


def test_interpolant_requires_margin():
    with pytest.raises(ValueError):
        borel_interpolate(np.ones(3), 1.0, 1.0)
    with pytest.raises(ValueError):
        borel_interpolate(np.array([1.0, np.nan]), 1.0, 2.0)


def test_jet_arithmetic_against_closed_forms():
    x = Jet.variable(0.3, 8)
    e = jets.exp(x * 2.0)
    ref = [math.exp(0.6) * 2.0**k for k in range(9)]
    assert np.allclose(e.derivatives(), ref, rtol=1e-14)
    lg = jets.log(x + 1.0)
    ref = [math.log(1.3)] + [(-1) ** (k - 1) * math.factorial(k - 1) / 1.3**k for k in range(1, 9)]
    assert np.allclose(lg.derivatives(), ref, rtol=1e-13)
    q = (x * x) / (x + 1.0)
    assert q.derivatives()[1] == pytest.approx((2 * 0.3 * 1.3 - 0.09) / 1.3**2, rel=1e-14)
