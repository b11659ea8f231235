"""Exponential integral Ei(x), principal value, for real x != 0."""

from __future__ import annotations

import math

import numpy as np

EULER_GAMMA = 0.5772156649015329
# positive zero of Ei, as a double-double so that x - root is exact near it
_ROOT_HI = 0.3725074107813666
_ROOT_LO = 1.3140183414386028e-17
_ROOT_RADIUS = 0.12
_EPS = 1e-17


def _taylor_coeffs(nterms: int) -> np.ndarray:
    """Taylor coefficients of exp(x)/x about the root: c_k with exp(x)/x = sum c_k h^k."""
    x0 = _ROOT_HI + _ROOT_LO
    inv = [(-1.0) ** j / x0 ** (j + 1) for j in range(nterms)]
    fact = [1.0 / math.factorial(i) for i in range(nterms)]
    e0 = math.exp(x0)
    # largest term (i = 0) first keeps the alternating sum well conditioned
    return np.array([e0 * sum(fact[i] * inv[k - i] for i in range(k + 1)) for k in range(nterms)])


_TAYLOR = _taylor_coeffs(40)


def _ei_near_root(x: float) -> float:
    h = (x - _ROOT_HI) - _ROOT_LO
    acc = 0.0
    p = h
    for k, c in enumerate(_TAYLOR):
        term = c * p / (k + 1)
        acc += term
        if abs(term) <= _EPS * abs(acc):
            break
        p *= h
    return acc


def _ei_series(x: float) -> float:
    """gamma + ln|x| + sum x^k / (k k!)."""
    s = 0.0
    term = 1.0
    k = 1
    while True:
        term *= x / k
        add = term / k
        s += add
        if abs(add) <= _EPS * abs(s):
            break
        k += 1
        if k > 5000:
            raise ArithmeticError(f"Ei series failed to converge at x = {x}")
    return EULER_GAMMA + math.log(abs(x)) + s


def _ei_asymptotic(x: float) -> float | None:
    """exp(x)/x * sum k!/x^k, truncated at the smallest term; None if not accurate enough."""
    s = 1.0
    term = 1.0
    k = 1
    while True:
        nxt = term * k / x
        if nxt >= term:
            return None
        term = nxt
        s += term
        if term <= _EPS * s:
            break
        k += 1
    return math.exp(x) / x * s


def _e1_continued_fraction(y: float) -> float:
    """E1(y) for y > 0 by the modified Lentz method on the continued fraction."""
    tiny = 1e-300
    b = y + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 1000):
        a = -float(i * i)
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h * math.exp(-y)
    raise ArithmeticError(f"E1 continued fraction failed to converge at y = {y}")


def exp_integral_ei_scalar(x: float) -> float:
    x = float(x)
    if x == 0.0:
        raise ZeroDivisionError("Ei(x) diverges logarithmically at x = 0")
    if math.isnan(x):
        return math.nan
    if x < 0:
        y = -x
        if y <= 1.0:
            return _ei_series(x)
        return -_e1_continued_fraction(y)
    if abs(x - _ROOT_HI) < _ROOT_RADIUS:
        return _ei_near_root(x)
    if x > 40.0:
        if x > 709.78:
            return math.inf
        v = _ei_asymptotic(x)
        if v is not None:
            return v
    return _ei_series(x)


def exp_integral_ei(x):
    """Ei(x) = PV integral of exp(t)/t from -inf to x.  Elementwise on arrays."""
    if np.ndim(x) == 0:
        return exp_integral_ei_scalar(x)
    arr = np.asarray(x, dtype=float)
    out = np.empty(arr.shape)
    flat = out.reshape(-1)
    for i, v in enumerate(arr.reshape(-1)):
        flat[i] = exp_integral_ei_scalar(v)
    return out


def ei_exp_neg(x):
    """Ei(x) exp(-x), evaluated without overflow for large x."""
    if np.ndim(x) == 0:
        return _ei_exp_neg_scalar(float(x))
    arr = np.asarray(x, dtype=float)
    return np.array([_ei_exp_neg_scalar(v) for v in arr.reshape(-1)]).reshape(arr.shape)


def _ei_exp_neg_scalar(x: float) -> float:
    if x > 40.0:
        s = 1.0
        term = 1.0
        k = 1
        while True:
            nxt = term * k / x
            if nxt >= term:
                break
            term = nxt
            s += term
            if term <= _EPS * s:
                return s / x
            k += 1
        if x < 700.0:
            return exp_integral_ei_scalar(x) * math.exp(-x)
        raise ArithmeticError(f"cannot evaluate Ei(x) exp(-x) at x = {x}")
    return exp_integral_ei_scalar(x) * math.exp(-x)
