import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from wtlab.pdf import (AmplitudePdf, FluxSolution, NegativeDensityError, PdfStabilityError, SingularityError,
                       cutoff_injection, evolve_pdf, face_fluxes, flux_of, make_grid, max_stable_dt,
                       printed_cutoff_residuals, rayleigh_cells, rayleigh_l1, rayleigh_pdf, steady_pdf_finite_flux,
                       steady_pdf_finite_flux_derivative, steady_pdf_with_cutoff, tail_exponent, tail_series)

mpmath.mp.dps = 30


def test_rayleigh_examples():
    assert rayleigh_pdf(0.0, 2.0) == 0.5
    total, _ = integrate.quad(rayleigh_pdf, 0, math.inf, args=(2.0,))
    assert total == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        rayleigh_pdf(1.0, 0.0)


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_rayleigh_moments(p):
    n = 1.7
    m, _ = integrate.quad(lambda s: s ** p * rayleigh_pdf(s, n), 0, math.inf, epsrel=1e-12)
    assert m == pytest.approx(math.factorial(p) * n ** p, rel=1e-8)


@pytest.mark.parametrize("lam_n", [0.1, 0.5, 0.9])
def test_rayleigh_laplace_transform(lam_n):
    n = 1.3
    lam = lam_n / n
    # beyond 600/lam the integrand is below e^-66 and exp(lam s) would overflow
    Z, _ = integrate.quad(lambda s: math.exp(lam * s) * rayleigh_pdf(s, n), 0, 600 / lam, epsrel=1e-12, limit=200)
    assert Z == pytest.approx(1.0 / (1.0 - lam_n), rel=1e-6)


def test_flux_free_solution_is_homogeneous():
    sol = FluxSolution(2.0, 1.0, 0.5, F=0.0, C=0.3)
    s = np.linspace(0, 10, 11)
    assert np.allclose(steady_pdf_finite_flux(s, sol), 0.3 * np.exp(-s / 2.0), rtol=1e-15)


def test_flux_solution_requires_ratio():
    with pytest.raises(ValueError):
        FluxSolution(1.0, 1.0, 2.0)


def _mp_solution(s, n, eta, F, C):
    x = mpmath.mpf(s) / n
    return C * mpmath.exp(-x) - (F / eta) * mpmath.ei(x) * mpmath.exp(-x)


def test_finite_flux_residual():
    sol = FluxSolution(1.0, 1.0, 1.0, F=-1e-3, C=1.0)
    s = np.geomspace(0.01, 50, 50)
    P = steady_pdf_finite_flux(s, sol)
    dP = steady_pdf_finite_flux_derivative(s, sol)
    assert np.max(np.abs(flux_of(P, dP, s, sol.gamma, sol.eta) - sol.F)) <= 1e-10
    # independent check with high-precision numerical differentiation
    for si in s[::7]:
        mp_P = _mp_solution(si, 1, 1, mpmath.mpf(-1e-3), 1)
        mp_dP = mpmath.diff(lambda v: _mp_solution(v, 1, 1, mpmath.mpf(-1e-3), 1), mpmath.mpf(si))
        assert float(mp_P) == pytest.approx(steady_pdf_finite_flux(si, sol), rel=1e-12)
        res = -mpmath.mpf(si) * (mp_P + mp_dP) - mpmath.mpf(-1e-3)
        assert abs(float(res)) <= 1e-10


def test_finite_flux_tail_value():
    sol = FluxSolution(1.0, 1.0, 1.0, F=-1e-3, C=0.0)
    v = steady_pdf_finite_flux(30.0, sol)
    assert v == pytest.approx(3.44e-5, rel=0.02)
    assert v == pytest.approx(tail_series(30.0, 1.0, 1.0, -1e-3, 2), rel=0.02)


def test_finite_flux_singular_at_zero():
    with pytest.raises(SingularityError):
        steady_pdf_finite_flux(0.0, FluxSolution(1.0, 1.0, 1.0, F=-1.0))


def test_tail_series_examples():
    assert tail_series(100.0, 1.0, 1.0, -1.0, 1) == pytest.approx(0.01, rel=1e-15)
    assert tail_series(100.0, 1.0, 1.0, -1.0, 2) == pytest.approx(0.0101, rel=1e-14)
    with pytest.raises(ValueError):
        tail_series(2.0, 1.0, 1.0, -1.0)
    with pytest.warns(UserWarning):
        tail_series(7.0, 1.0, 1.0, -1.0)


@given(st.floats(20.0, 500.0), st.floats(0.2, 5.0))
def test_tail_series_matches_exact(x, n):
    sol = FluxSolution(n, n * 0.7, 0.7, F=-0.01, C=0.0)
    s = x * n
    ratio = tail_series(s, n, 0.7, -0.01, 2) / steady_pdf_finite_flux(s, sol)
    assert ratio == pytest.approx(1.0, abs=0.01)


def test_flux_of_examples():
    n = 2.0
    s = np.linspace(0, 20, 41)
    P = rayleigh_pdf(s, n)
    assert np.allclose(flux_of(P, -P / n, s, 0.5, 1.0), 0.0, atol=1e-16)
    assert flux_of(3.0, 1.0, 0.0, 1.0, 1.0) == 0.0


def _grid(n=1.0, smax=30.0, cells=200):
    return make_grid(n, smax, cells)


def _dt(edges, g, e, t_end):
    lim = max_stable_dt(edges, g, e)
    steps = math.ceil(t_end / lim)
    return t_end / steps


def test_rayleigh_is_stationary():
    edges = _grid()
    pdf = rayleigh_cells(edges, 1.0)
    tr = evolve_pdf(pdf, 1.0, 1.0, _dt(edges, 1.0, 1.0, 10.0), 10.0, snapshots=2)
    assert np.max(np.abs(tr.P[-1] - pdf.P)) <= 1e-8 * np.max(pdf.P)


def test_spike_relaxes_monotonically_and_conserves_mass():
    edges = _grid()
    c = 0.5 * (edges[:-1] + edges[1:])
    P = np.where(np.abs(c - 0.5) < 0.05, 1.0, 0.0)
    pdf = AmplitudePdf(edges, P).normalized()
    T = 8.0
    tr = evolve_pdf(pdf, 1.0, 1.0, _dt(edges, 1.0, 1.0, T), T, snapshots=16)
    d = [rayleigh_l1(AmplitudePdf(edges, p), 1.0) for p in tr.P]
    assert all(b < a for a, b in zip(d, d[1:]))
    assert d[-1] < 0.01
    assert np.max(np.abs(tr.mass - 1.0)) <= 1e-12 * T
    assert tr.pmin >= -1e-12
    m1 = AmplitudePdf(edges, tr.P[-1]).moment(1)
    assert m1 == pytest.approx(1.0, rel=1e-2)


def test_stability_guard():
    edges = _grid()
    with pytest.raises(PdfStabilityError):
        evolve_pdf(rayleigh_cells(edges, 1.0), 1.0, 1.0, 10 * max_stable_dt(edges, 1.0, 1.0), 1.0)


def test_central_scheme_negative_density_detected():
    # coarse cells make the central stencil non-monotone in the tail
    edges = np.linspace(0, 200.0, 21)
    P = np.zeros(20)
    P[-2] = 1.0
    dt = max_stable_dt(edges, 1.0, 0.05)
    with pytest.raises(NegativeDensityError):
        evolve_pdf(AmplitudePdf(edges, P).normalized(), 1.0, 0.05, dt, 200 * dt, scheme="central")


@pytest.mark.parametrize("boundary", ["injection", "absorbing"])
def test_cutoff_evolution_reaches_steady_flux(boundary):
    n, s_nl = 1.0, 20.0
    edges = make_grid(n, s_nl, 160)
    T = 60.0
    tr = evolve_pdf(rayleigh_cells(edges, n, s_nl), 1.0, 1.0, _dt(edges, 1.0, 1.0, T), T,
                    boundary=boundary, snapshots=2)
    assert tr.mass[-1] == pytest.approx(1.0, abs=1e-10)
    steady = steady_pdf_with_cutoff(n, 1.0, 1.0, s_nl, edges=edges, boundary=boundary)
    assert np.max(np.abs(tr.P[-1] - steady.pdf.P)) <= 1e-6 * np.max(steady.pdf.P)
    # in the tail the face flux is nearly uniform: the sink removes little there
    F = face_fluxes(AmplitudePdf(edges, tr.P[-1], s_nl), 1.0, 1.0, boundary,
                    inject=cutoff_injection(n, 1.0, s_nl))
    sel = (edges > 5 * n) & (edges < 0.9 * s_nl)
    assert np.ptp(F[sel]) <= 0.2 * np.max(np.abs(F[sel]))


def test_cutoff_far_away_recovers_rayleigh():
    sol = steady_pdf_with_cutoff(1.0, 1.0, 1.0, 1e4)
    assert rayleigh_l1(sol.pdf, 1.0) <= 1e-3
    assert sol.pdf.mass() == pytest.approx(1.0, rel=1e-8)


def test_cutoff_tail_exponent():
    sol = steady_pdf_with_cutoff(1.0, 1.0, 1.0, 100.0)
    slope, _ = tail_exponent(sol.pdf, 10.0, 80.0)
    assert slope == pytest.approx(-1.0, abs=0.15)
    assert sol.balance_error <= 1e-8


@pytest.mark.parametrize("ratio,lo", [(100.0, 20.0), (1000.0, 100.0), (1e4, 1000.0)])
def test_cutoff_local_slope_window(ratio, lo):
    # at s_nl = 100 n the Rayleigh core still steepens the profile near s = 10 n
    sol = steady_pdf_with_cutoff(1.0, 1.0, 1.0, ratio)
    c, P = sol.pdf.centers, sol.pdf.P
    sel = (c >= lo) & (c <= 0.8 * ratio)
    local = np.gradient(np.log(P[sel]), np.log(c[sel]))
    assert np.all(local >= -1.3) and np.all(local <= -0.7)


def test_absorbing_cutoff_balances():
    sol = steady_pdf_with_cutoff(1.0, 1.0, 1.0, 100.0, boundary="absorbing")
    assert sol.balance_error <= 1e-8
    assert np.all(sol.pdf.P >= 0)


def test_cutoff_too_close():
    with pytest.raises(ValueError):
        steady_pdf_with_cutoff(1.0, 1.0, 1.0, 3.0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        steady_pdf_with_cutoff(1.0, 1.0, 1.0, 10.0)
    assert any("tail region" in str(x.message) for x in w)


def test_printed_readings_reported():
    sol = steady_pdf_with_cutoff(1.0, 1.0, 1.0, 100.0)
    res = printed_cutoff_residuals(sol)
    assert set(res) == {"argument", "subtracted"}
    assert all(np.isfinite(v) for v in res.values())
