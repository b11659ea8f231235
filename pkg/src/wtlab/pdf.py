"""Amplitude-space PDF: flux equation, closed-form steady states, cutoff model.

The PDF of the intensity ``s = |a_k|^2`` obeys ``dP/dt + dF/ds = 0`` with the
flux ``F = -s (gamma P + eta dP/ds)``.  This is the Fokker-Planck equation of
``ds = (eta - gamma s) dt + sqrt(2 eta s) dW``: drift ``-gamma s`` (plus the
Ito term) and diffusion ``eta s``.

Finite volumes use a geometric grid and Scharfetter-Gummel face fluxes,
``F_{i+1/2} = A_i P_i - C_i P_{i+1}`` with
``A = (D/h) B(-Pe)``, ``C = (D/h) B(Pe)``, ``D = eta s_f``, ``Pe = -gamma h / eta``
and ``B(x) = x / (exp(x) - 1)``.  Densities live at cell centres, so the
sampled Rayleigh profile is an exact discrete steady state.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eig, solve_banded
from scipy.optimize import brentq

from . import kernels
from .special import ei_exp_neg, exp_integral_ei

log = logging.getLogger(__name__)

BOUNDARIES = {"zero_flux": 0, "injection": 1, "absorbing": 2}
DEFAULT_CUTOFF_WEIGHT = 0.4


class SingularityError(ValueError):
    """Finite-flux solution evaluated at s = 0, where Ei diverges."""


class PdfStabilityError(ValueError):
    """Explicit step exceeds the diffusion/drift limit of the grid."""


class NegativeDensityError(ArithmeticError):
    pass


def rayleigh_pdf(s, n: float):
    """(1/n) exp(-s/n)."""
    if not n > 0:
        raise ValueError(f"mean intensity must be positive, got {n}")
    s = np.asarray(s, dtype=float)
    out = np.exp(-s / n) / n
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# closed-form steady states


@dataclass(frozen=True)
class FluxSolution:
    """Steady solution ``C exp(-s/n) - (F/eta) Ei(s/n) exp(-s/n)``; requires gamma / eta = 1/n."""

    n: float
    eta: float
    gamma: float
    F: float = 0.0
    C: float = 1.0

    def __post_init__(self):
        if not (self.n > 0 and self.eta > 0 and self.gamma > 0):
            raise ValueError("n, eta and gamma must be positive")
        if not math.isclose(self.gamma * self.n, self.eta, rel_tol=1e-12):
            raise ValueError(f"steady solution needs gamma/eta = 1/n (gamma n = {self.gamma * self.n}, eta = {self.eta})")
        if self.F > 0:
            log.info("positive flux: the particular solution is negative in the tail")


def steady_pdf_finite_flux(s, sol: FluxSolution):
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ValueError("intensity must be non-negative")
    x = s_arr / sol.n
    if sol.F == 0.0:
        out = sol.C * np.exp(-x)
    else:
        if np.any(s_arr == 0):
            raise SingularityError("Ei(s/n) diverges logarithmically at s = 0")
        out = sol.C * np.exp(-x) - (sol.F / sol.eta) * np.asarray(ei_exp_neg(x))
    return float(out) if out.ndim == 0 else out


def steady_pdf_finite_flux_derivative(s, sol: FluxSolution):
    """dP/ds = -P/n - F/(eta s), from d/dx [Ei(x) e^-x] = 1/x - Ei(x) e^-x."""
    s_arr = np.asarray(s, dtype=float)
    P = np.asarray(steady_pdf_finite_flux(s_arr, sol))
    out = -P / sol.n
    if sol.F != 0.0:
        out = out - sol.F / (sol.eta * s_arr)
    return float(out) if out.ndim == 0 else out


def tail_series(s, n: float, gamma: float, F: float, order: int = 2):
    """Large-s expansion ``-(F/eta) sum_{m<order} m! (n/s)^(m+1)`` with ``eta = gamma n``.

    Order 1 is ``-F/(gamma s)``; order 2 adds ``-eta F/(gamma s)^2``.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    s = np.asarray(s, dtype=float)
    if np.any(s < 5.0 * n):
        raise ValueError("tail series needs s >= 5 n")
    if np.any(s < 10.0 * n):
        warnings.warn("tail series used below s = 10 n; expect a few percent error", stacklevel=2)
    eta = gamma * n
    x = n / s
    acc = np.zeros_like(s)
    term = x.copy()
    for m in range(order):
        acc = acc + term
        term = term * x * (m + 1)
    out = -(F / eta) * acc
    return float(out) if out.ndim == 0 else out


def flux_of(P, dP, s, gamma, eta):
    """F = -s (gamma P + eta dP/ds)."""
    out = -np.asarray(s, dtype=float) * (gamma * np.asarray(P, dtype=float) + eta * np.asarray(dP, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# discretized PDF


def geometric_edges(smax: float, cells: int, first: float) -> np.ndarray:
    """Cell edges from 0 to smax with geometrically growing widths, first width ``first``."""
    if cells < 2:
        raise ValueError("need at least 2 cells")
    if not 0 < first < smax:
        raise ValueError("first width must lie in (0, smax)")
    if first * cells >= smax:
        return np.linspace(0.0, smax, cells + 1)

    def total(r):
        return first * (r ** cells - 1.0) / (r - 1.0) - smax

    r = brentq(total, 1.0 + 1e-12, 2.0 ** (900.0 / cells))
    widths = first * r ** np.arange(cells)
    edges = np.concatenate([[0.0], np.cumsum(widths)])
    edges[-1] = smax
    return edges


@dataclass
class AmplitudePdf:
    edges: np.ndarray
    P: np.ndarray
    s_nl: float | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        if self.P.shape != (self.edges.size - 1,):
            raise ValueError("density and grid sizes differ")
        if self.s_nl is not None and self.edges[-1] > self.s_nl * (1 + 1e-12):
            raise ValueError("grid extends above the cutoff")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def mass(self) -> float:
        return float(np.sum(self.P * self.widths))

    def moment(self, p: int) -> float:
        return float(np.sum(self.centers ** p * self.P * self.widths))

    def normalized(self) -> "AmplitudePdf":
        return AmplitudePdf(self.edges, self.P / self.mass(), self.s_nl)


def make_grid(n: float, smax: float, cells: int = 400, first: float | None = None) -> np.ndarray:
    if first is None:
        first = min(0.02 * n, smax / cells)
    return geometric_edges(smax, cells, first)


def rayleigh_cells(edges, n: float, s_nl: float | None = None) -> AmplitudePdf:
    """Rayleigh density sampled at cell centres, normalized on the grid."""
    pdf = AmplitudePdf(edges, np.exp(-0.5 * (edges[:-1] + edges[1:]) / n), s_nl)
    return pdf.normalized()


def _bern(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-10
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, xs / np.expm1(xs))


def face_coefficients(edges, gamma: float, eta: float, scheme: str = "sg"):
    """Interior (A, C) and the top-edge outflow coefficient for a Dirichlet zero there."""
    edges = np.asarray(edges, dtype=float)
    c = 0.5 * (edges[:-1] + edges[1:])
    sf = edges[1:-1]
    h = np.diff(c)
    htop = edges[-1] - c[-1]
    D = eta * sf
    v = -gamma * sf
    Dt = eta * edges[-1]
    vt = -gamma * edges[-1]
    if scheme == "sg":
        pe = v * h / D
        A = D / h * _bern(-pe)
        C = D / h * _bern(pe)
        top = Dt / htop * _bern(-vt * htop / Dt)
    elif scheme == "central":
        A = 0.5 * v + D / h
        C = D / h - 0.5 * v
        top = 0.5 * vt + Dt / htop
    else:
        raise ValueError(f"unknown flux scheme {scheme!r}")
    return A, C, float(top)


def face_fluxes(pdf: AmplitudePdf, gamma, eta, boundary="zero_flux", inject=0.0, scheme="sg"):
    """Face fluxes F_{1/2} .. F_{N+1/2} (F at s = 0 is zero)."""
    A, C, top = face_coefficients(pdf.edges, gamma, eta, scheme)
    P = pdf.P
    F = np.zeros(P.size + 1)
    F[1:-1] = A * P[:-1] - C * P[1:]
    if boundary == "injection":
        F[-1] = -inject
    elif boundary == "absorbing":
        F[-1] = top * P[-1]
    return F


def max_stable_dt(edges, gamma: float, eta: float) -> float:
    """0.25 min(ds^2 / (eta s), ds / (gamma s)) over cell centres."""
    edges = np.asarray(edges, dtype=float)
    w = np.diff(edges)
    c = 0.5 * (edges[:-1] + edges[1:])
    lim = w * w / (eta * c)
    if gamma > 0:
        lim = np.minimum(lim, w / (gamma * c))
    return 0.25 * float(lim.min())


@dataclass
class PdfTrajectory:
    t: np.ndarray
    P: np.ndarray  # (snapshots, cells)
    edges: np.ndarray
    mass: np.ndarray
    pmin: float
    boundary: str


def evolve_pdf(pdf: AmplitudePdf, gamma: float, eta: float, dt: float, t_end: float,
               boundary: str = "zero_flux", inject: float | None = None, snapshots: int = 10,
               scheme: str = "sg", cutoff_weight: float = DEFAULT_CUTOFF_WEIGHT) -> PdfTrajectory:
    """Explicit conservative finite-volume evolution.

    ``boundary``: ``zero_flux`` (closed), ``injection`` (probability enters at
    the cutoff at rate ``inject`` and is removed by a sink proportional to P),
    or ``absorbing`` (P = 0 at the cutoff; the outflow is reinjected in
    proportion to P).  The last two conserve total probability exactly.
    """
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary {boundary!r}")
    limit = max_stable_dt(pdf.edges, gamma, eta)
    if dt > limit * (1 + 1e-12):
        raise PdfStabilityError(f"dt = {dt:.4g} exceeds the stability limit {limit:.4g}")
    nsteps = int(round(t_end / dt))
    if not math.isclose(nsteps * dt, t_end, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_end must be a multiple of dt")
    if boundary == "injection" and inject is None:
        inject = cutoff_injection(eta / gamma, gamma, pdf.edges[-1], cutoff_weight)
    A, C, top = face_coefficients(pdf.edges, gamma, eta, scheme)
    width = pdf.widths
    P = pdf.P.astype(float).copy()
    snaps = max(1, snapshots)
    bounds = np.linspace(0, nsteps, snaps + 1).round().astype(int)
    ts, Ps, masses = [0.0], [P.copy()], [float(np.sum(P * width))]
    pmin = float(P.min())
    for a, b in zip(bounds[:-1], bounds[1:]):
        if b > a:
            pm = kernels.pdf_advance(P, width, A, C, top, dt, b - a, BOUNDARIES[boundary],
                                     0.0 if inject is None else inject)
            pmin = min(pmin, pm)
            if pmin < -1e-12:
                raise NegativeDensityError(f"density fell to {pmin:.3g}; reduce dt")
        ts.append(b * dt)
        Ps.append(P.copy())
        masses.append(float(np.sum(P * width)))
    return PdfTrajectory(np.array(ts), np.array(Ps), pdf.edges, np.array(masses), pmin, boundary)


# ---------------------------------------------------------------------------
# breaking cutoff


def cutoff_injection(n: float, gamma: float, s_nl: float, weight: float = DEFAULT_CUTOFF_WEIGHT) -> float:
    """Probability flux entering at the cutoff, ``weight * gamma * n / s_nl``.

    The tail level ``s P(s)`` in the 1/s region equals ``flux / gamma``.
    ``weight`` is the dimensionless strength of the breaking source; the
    flux amplitude is set by the breaking mechanism rather than by the
    weak-turbulence rates.
    """
    if weight < 0:
        raise ValueError("cutoff weight must be non-negative")
    return weight * gamma * n / s_nl


@dataclass
class CutoffSolution:
    pdf: AmplitudePdf
    n: float
    gamma: float
    eta: float
    boundary: str
    sink_rate: float
    leakage: float
    sink_total: float
    flux: np.ndarray = field(repr=False)

    @property
    def balance_error(self) -> float:
        return abs(self.sink_total - self.leakage) / max(abs(self.leakage), 1e-300)


def steady_pdf_with_cutoff(n: float, gamma: float, eta: float, s_nl: float, cells: int = 400,
                           edges=None, boundary: str = "injection",
                           weight: float = DEFAULT_CUTOFF_WEIGHT, scheme: str = "sg") -> CutoffSolution:
    """Steady state of the flux equation on [0, s_nl] with a breaking source/sink.

    ``injection``: probability flux ``cutoff_injection(...)`` enters at
    s_nl and is removed by a sink ``sigma P``; the steady mass is 1 exactly
    when ``sigma`` equals the injected flux, which is a linear tridiagonal
    solve.  ``absorbing``: P = 0 at s_nl with proportional reinjection of the
    outflow, i.e. the principal eigenvector of the absorbing generator.
    """
    if s_nl < 5.0 * n:
        raise ValueError("cutoff must satisfy s_nl >= 5 n")
    if s_nl < 20.0 * n:
        warnings.warn("s_nl < 20 n leaves no room for a 1/s tail region", stacklevel=2)
    if edges is None:
        edges = make_grid(n, s_nl, cells)
    edges = np.asarray(edges, dtype=float)
    if not math.isclose(edges[-1], s_nl, rel_tol=1e-12):
        raise ValueError("grid must end at the cutoff")
    A, C, top = face_coefficients(edges, gamma, eta, scheme)
    w = np.diff(edges)
    N = w.size
    # dP_i/dt = -(F_{i+1/2} - F_{i-1/2}) / w_i + source_i
    diag = np.zeros(N)
    diag[:-1] -= A / w[:-1]
    diag[1:] -= C / w[1:]
    upper = C / w[:-1]       # coefficient of P_{i+1} in row i
    lower = A / w[1:]        # coefficient of P_{i-1} in row i
    if boundary == "injection":
        J = cutoff_injection(n, gamma, s_nl, weight)
        sigma = J
        ab = np.zeros((3, N))
        ab[0, 1:] = upper
        ab[1] = diag - sigma
        ab[2, :-1] = lower
        rhs = np.zeros(N)
        rhs[-1] = -J / w[-1]
        P = solve_banded((1, 1), ab, rhs)
        leakage = J
    elif boundary == "absorbing":
        diag[-1] -= top / w[-1]
        L = np.diag(diag) + np.diag(upper, 1) + np.diag(lower, -1)
        vals, vecs = eig(L)
        i = int(np.argmax(vals.real))
        P = np.abs(vecs[:, i].real)
        P /= np.sum(P * w)
        leakage = top * P[-1]
        # the eigenvalue equals -leakage up to eigensolver roundoff; use the balance form
        sigma = leakage / float(np.sum(P * w))
    else:
        raise ValueError(f"unknown cutoff boundary {boundary!r}")
    pdf = AmplitudePdf(edges, P, s_nl)
    sink_total = sigma * pdf.mass()
    F = np.zeros(N + 1)
    F[1:-1] = A * P[:-1] - C * P[1:]
    F[-1] = -leakage if boundary == "injection" else leakage
    return CutoffSolution(pdf, n, gamma, eta, boundary, sigma, leakage, sink_total, F)


def tail_exponent(pdf: AmplitudePdf, lo: float, hi: float) -> tuple[float, float]:
    """Least-squares slope of log P against log s over cell centres in [lo, hi], with its standard error."""
    c = pdf.centers
    m = (c >= lo) & (c <= hi) & (pdf.P > 0)
    if np.count_nonzero(m) < 3:
        raise ValueError("fewer than 3 cells in the fit window")
    x = np.log(c[m])
    y = np.log(pdf.P[m])
    X = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = max(1, x.size - 2)
    s2 = float(np.sum((y - X @ coef) ** 2)) / dof
    cov = s2 * np.linalg.inv(X.T @ X)
    return float(coef[0]), float(math.sqrt(cov[0, 0]))


def rayleigh_l1(pdf: AmplitudePdf, n: float, smax: float | None = None) -> float:
    """sum |P_i - rayleigh(c_i)| w_i over cells with centre <= smax."""
    c = pdf.centers
    m = np.ones_like(c, dtype=bool) if smax is None else c <= smax
    return float(np.sum(np.abs(pdf.P[m] - rayleigh_pdf(c[m], n)) * pdf.widths[m]))


def printed_cutoff_residuals(sol: CutoffSolution, lo: float | None = None, hi: float | None = None) -> dict:
    """Residuals of the two readings of the closed form ``[C - F Ei(.) / eta] exp(-s/n)``.

    Reading ``argument``: Ei(s/n - ln s).  Reading ``subtracted``: Ei(s/n) - ln s.
    For each, C is fitted to the numerical solution at s = n and the
    relative sup-residual of ``-s (gamma P + eta P') = F`` is reported over
    the tail window, with F the injected (negative) flux.
    """
    n, g, e = sol.n, sol.gamma, sol.eta
    F = -sol.leakage if sol.boundary == "injection" else sol.leakage
    lo = 10.0 * n if lo is None else lo
    hi = 0.8 * sol.pdf.edges[-1] if hi is None else hi
    s = np.geomspace(lo, hi, 64)

    def shape(kind, x):
        if kind == "argument":
            return exp_integral_ei(x / n - np.log(x))
        return exp_integral_ei(x / n) - np.log(x)

    out = {}
    c = sol.pdf.centers
    Pn = float(np.interp(n, c, sol.pdf.P))
    for kind in ("argument", "subtracted"):
        base = np.exp(-n / n)
        Cfit = Pn / base + F * float(shape(kind, np.array([n]))[0]) / e

        def P(x):
            return (Cfit - F * shape(kind, x) / e) * np.exp(-x / n)

        h = 1e-6 * s
        dP = (P(s + h) - P(s - h)) / (2 * h)
        res = -s * (g * P(s) + e * dP) - F
        out[kind] = float(np.max(np.abs(res)) / abs(F)) if F != 0 else float(np.max(np.abs(res)))
    return out
