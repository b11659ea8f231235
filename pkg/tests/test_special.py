import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from wtlab.special import EULER_GAMMA, ei_exp_neg, exp_integral_ei

mpmath.mp.dps = 40


def _ei_quadrature(x):
    """PV integral of e^t/t from -inf to x by an adaptive integrator (x > 1)."""
    tail, _ = integrate.quad(lambda t: math.exp(t) / t, -math.inf, -1.0, epsabs=0, epsrel=1e-13)
    pv, _ = integrate.quad(math.exp, -1.0, 1.0, weight="cauchy", wvar=0.0, epsabs=0, epsrel=1e-13)
    rest = 0.0
    if x > 1.0:
        rest, _ = integrate.quad(lambda t: math.exp(t) / t, 1.0, x, epsabs=0, epsrel=1e-13)
    return tail + pv + rest


def test_ei_at_one_matches_quadrature():
    assert _ei_quadrature(1.0) == pytest.approx(1.895117816355937, rel=1e-12)
    assert exp_integral_ei(1.0) == pytest.approx(1.895117816355937, rel=1e-14)


@pytest.mark.parametrize("x", [0.5, 2.0, 10.0])
def test_ei_derivative(x):
    h = 1e-5 * x
    d = (exp_integral_ei(x + h) - exp_integral_ei(x - h)) / (2 * h)
    assert d == pytest.approx(math.exp(x) / x, rel=1e-6)


def test_ei_small_argument_series():
    x = 1e-8
    assert exp_integral_ei(x) - math.log(x) - EULER_GAMMA == pytest.approx(x + x * x / 4, rel=1e-6, abs=1e-16)


def test_ei_zero_diverges():
    with pytest.raises(ZeroDivisionError):
        exp_integral_ei(0.0)


@given(st.floats(1e-6, 700.0))
def test_ei_relative_accuracy_positive(x):
    ref = float(mpmath.ei(x))
    assert exp_integral_ei(x) == pytest.approx(ref, rel=1e-12)


@given(st.floats(1e-6, 700.0))
def test_ei_relative_accuracy_negative(x):
    ref = float(mpmath.ei(-x))
    assert exp_integral_ei(-x) == pytest.approx(ref, rel=1e-12)


def test_ei_near_positive_root():
    root = float(mpmath.findroot(mpmath.ei, 0.37))
    for x in np.linspace(root - 0.1, root + 0.1, 41):
        ref = float(mpmath.ei(x))
        assert exp_integral_ei(x) == pytest.approx(ref, rel=1e-12)


def test_ei_vectorized_and_scaled():
    x = np.array([0.1, 1.0, 30.0, 500.0])
    want = np.array([float(mpmath.ei(v) * mpmath.exp(-v)) for v in x])
    assert np.allclose(ei_exp_neg(x), want, rtol=1e-12, atol=0)
    assert ei_exp_neg(2000.0) == pytest.approx(float(mpmath.ei(2000) * mpmath.exp(-2000)), rel=1e-12)
    assert exp_integral_ei(x).shape == x.shape
