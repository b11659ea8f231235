"""Collision coefficients eta_k and gamma_k.

Two routes are provided:

* discrete sums over the grid with the finite-time kernel
  ``K_T(x) = 2 sin^2(xT/2) / (pi T x^2)`` in place of the frequency delta;
* continuum quadrature over the resonant manifold for isotropic spectra.

With lattice spacing ``dk = 2 pi / L`` the two are related by
``eta_continuum ~= eta_discrete * dk**(2 d)`` (each lattice sum over a
partner wavevector approximates an integral divided by ``dk**d``); the
discrete normalization constant itself is 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .wave_model import WaveModel

log = logging.getLogger(__name__)

CONVENTIONS = ("equilibrium", "literal")

# eta_continuum = eta_discrete * DISCRETE_NORMALIZATION * dk**(2d)
DISCRETE_NORMALIZATION = 1.0


@dataclass(frozen=True)
class BroadenedKernel:
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"averaging time must be positive, got {self.T}")

    def __call__(self, x):
        out = kernels.numpy_impl.broadened_kernel(x, self.T)
        return float(out) if np.ndim(out) == 0 else out


def delta_kernel(kern: BroadenedKernel, x):
    return kern(x)


@dataclass(frozen=True)
class TWindow:
    lower: float
    upper: float

    @property
    def T(self) -> float:
        return math.sqrt(self.lower * self.upper)


def t_window(model: WaveModel) -> TWindow:
    """Bounds ``2 pi / omega_max << T << 1 / (omega_min eps^2)``; the default T is their geometric mean."""
    w = model.omega[model.omega > 0]
    if w.size == 0:
        raise ValueError("no mode with positive frequency")
    if model.epsilon == 0:
        upper = math.inf
    else:
        upper = 1.0 / (float(w.min()) * model.epsilon ** 2)
    lower = 2.0 * math.pi / float(w.max())
    if not upper > lower:
        log.warning("T window is empty: lower %.4g >= upper %.4g", lower, upper)
    log.info("T window: lower %.6g, upper %.6g", lower, upper)
    return TWindow(lower, upper)


@dataclass
class CollisionRates:
    """Per-mode (eta, gamma) with the metadata that produced them."""

    kmag: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    source: str
    convention: str = "equilibrium"
    T: float | None = None
    quadrature: dict | None = None
    normalization: float = DISCRETE_NORMALIZATION
    modes: np.ndarray | None = None

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.eta.shape != self.gamma.shape:
            raise ValueError("eta and gamma shapes differ")

    def rows(self):
        T = "" if self.T is None else self.T
        for k, e, g in zip(np.atleast_1d(self.kmag), self.eta, self.gamma):
            yield (float(k), float(e), float(g), self.convention, T)


def _check_convention(convention):
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown collision convention {convention!r}; use one of {CONVENTIONS}")


def _check_spectrum(model: WaveModel, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape != (model.grid.size,):
        raise ValueError(f"spectrum has shape {n.shape}, grid has {model.grid.size} modes")
    if np.any(n < 0) or not np.all(np.isfinite(n)):
        raise ValueError("spectrum must be finite and non-negative")
    return n


def rates_discrete(model: WaveModel, n, T: float | None = None, convention: str = "equilibrium",
                   modes=None) -> CollisionRates:
    """Broadened lattice sums for all modes (or the selected ``modes``).

    Every quartet with ``k + k1 = k2 + k3`` on the grid enters, including the
    ones where a partner coincides with ``k``.  Summation order is
    lexicographic in (k1, k2), so results are reproducible.
    """
    _check_convention(convention)
    n = _check_spectrum(model, n)
    if T is None:
        T = t_window(model).T
    kern = BroadenedKernel(T)
    grid = model.grid
    targets = np.arange(grid.size) if modes is None else np.asarray(modes, dtype=np.int64).ravel()
    ptr, pm, pn = grid.pair_csr
    eta, gam = kernels.collision_sums(targets, grid.pair_index, ptr, pm, pn, model.omega,
                                      model.fac ** 2, n, kern.T, convention == "literal")
    pref = 4.0 * math.pi * model.epsilon ** 2 * model.coupling.prefactor ** 2
    gpref = 2.0 * pref if convention == "literal" else pref
    return CollisionRates(grid.kmag[targets], pref * eta, gpref * gam, "discrete", convention,
                          T=kern.T, modes=targets)


def eta_discrete(model, n, kern: BroadenedKernel | None = None, modes=None):
    T = None if kern is None else kern.T
    return rates_discrete(model, n, T, modes=modes).eta


def gamma_discrete(model, n, kern: BroadenedKernel | None = None, convention="equilibrium", modes=None):
    T = None if kern is None else kern.T
    return rates_discrete(model, n, T, convention, modes=modes).gamma


# ---------------------------------------------------------------------------
# continuum quadrature


@dataclass(frozen=True)
class QuadratureSpec:
    """Continuum quadrature settings.

    ``nodes``: Gauss-Legendre nodes per dimension for the outer wavevector and
    (2D) ray angles.  ``scan``: samples per ray used to bracket roots.
    ``box``: half-width of the integration box in k; every wavevector in a
    quartet is restricted to it.
    """

    nodes: int = 64
    root_tol: float = 1e-12
    scan: int = 96
    box: float = 10.0
    tangent_tol: float = 1e-8

    def __post_init__(self):
        if self.nodes < 4 or self.scan < 8:
            raise ValueError("quadrature too coarse")
        if not self.box > 0:
            raise ValueError("integration box must be positive")


@dataclass
class ContinuumResult:
    eta: float
    gamma: float
    roots: int
    near_singular: int


def _ray_dirs(d, nodes):
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    th = (np.arange(nodes) + 0.5) * (2.0 * math.pi / nodes)
    return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(nodes, 2.0 * math.pi / nodes)


def _outer_nodes(d, nodes, box):
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = x * box
    w = w * box
    if d == 1:
        return x[:, None], w
    X, Y = np.meshgrid(x, x, indexing="ij")
    WX, WY = np.meshgrid(w, w, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), (WX * WY).ravel()


def _resonant_points(law, half, E, dirs, rmax, quad: QuadratureSpec):
    """Roots of h(r) = w(|half + r e|) + w(|half - r e|) - E along each ray.

    ``half`` (B, d), ``E`` (B,), ``dirs`` (D, d), ``rmax`` (B,).  Returns
    batch index, direction index, r, and the weight ``r**(d-1) / |h'(r)|``
    (with the quadratic expansion at tangential roots), plus the count of
    tangential roots.
    """
    B, d = half.shape
    D = dirs.shape[0]
    t = np.linspace(0.0, 1.0, quad.scan)

    def h_of(bi, di, r):
        u = half[bi] + r[..., None] * dirs[di]
        v = half[bi] - r[..., None] * dirs[di]
        return (law.frequency(np.linalg.norm(u, axis=-1)) + law.frequency(np.linalg.norm(v, axis=-1))
                - E[bi])

    bi = np.repeat(np.arange(B), D)
    di = np.tile(np.arange(D), B)
    r = rmax[bi, None] * t[None, :]
    hv = h_of(bi[:, None], di[:, None], r)
    # roots exactly on a scan node count once, with the interval to their right
    sign = np.signbit(hv)
    change = (sign[:, :-1] != sign[:, 1:]) | (hv[:, :-1] == 0.0)
    ray, seg = np.nonzero(change)
    lo = r[ray, seg].copy()
    hi = r[ray, seg + 1].copy()
    b = bi[ray]
    dd = di[ray]
    hlo = hv[ray, seg]
    for _ in range(200):
        if np.all(hi - lo <= quad.root_tol * np.maximum(1.0, hi)):
            break
        mid = 0.5 * (lo + hi)
        hm = h_of(b, dd, mid)
        left = np.signbit(hm) != np.signbit(hlo)
        hi = np.where(left, mid, hi)
        lo = np.where(left, lo, mid)
        hlo = np.where(left, hlo, hm)
    root = np.where(hlo == 0.0, lo, 0.5 * (lo + hi))

    e = dirs[dd]
    u = half[b] + root[:, None] * e
    v = half[b] - root[:, None] * e
    nu_ = np.linalg.norm(u, axis=1)
    nv_ = np.linalg.norm(v, axis=1)
    gu = law.group_speed(nu_)
    gv = law.group_speed(nv_)
    with np.errstate(invalid="ignore", divide="ignore"):
        cu = np.where(nu_ > 0, np.sum(u * e, axis=1) / nu_, 0.0)
        cv = np.where(nv_ > 0, np.sum(v * e, axis=1) / nv_, 0.0)
        dh = np.where(nu_ > 0, gu * cu, 0.0) - np.where(nv_ > 0, gv * cv, 0.0)
    scale = float(np.max(np.abs(E))) if E.size else 1.0
    tangent = np.abs(dh) < quad.tangent_tol * max(scale, 1.0) / max(float(np.max(rmax)), 1.0)
    weight = np.empty_like(root)
    ok = ~tangent
    weight[ok] = root[ok] ** (d - 1) / np.abs(dh[ok])
    n_tan = int(np.count_nonzero(tangent))
    if n_tan:
        if d == 2:
            # h ~ h''(0) r^2 / 2 near the symmetric point, so r / |h'| -> 1 / |h''|
            hh = 1e-4 * max(float(np.max(rmax)), 1.0)
            bt, dt_ = b[tangent], dd[tangent]
            r0 = root[tangent]
            h2 = (h_of(bt, dt_, r0 + hh) - 2.0 * h_of(bt, dt_, r0) + h_of(bt, dt_, np.abs(r0 - hh))) / hh ** 2
            with np.errstate(divide="ignore"):
                weight[tangent] = np.where(h2 != 0, 1.0 / np.abs(h2), 0.0)
        else:
            weight[tangent] = 0.0
        log.warning("%d near-tangential resonant roots regularized", n_tan)
    return b, dd, u, v, weight, n_tan


def _as_vector(k, d) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        v = np.zeros(d)
        v[0] = float(k)
        return v
    if k.shape != (d,):
        raise ValueError(f"wavevector must have {d} components")
    return k


def continuum_rates(model: WaveModel, k, n_func: Callable, quad: QuadratureSpec = QuadratureSpec(),
                    convention: str = "equilibrium") -> ContinuumResult:
    """eta and gamma at one wavevector for an isotropic spectrum ``n_func(|k|)``.

    The momentum delta fixes ``k3 = k + k1 - k2``.  For every outer node k1
    the pair (k2, k3) is written ``P/2 +- r e`` with ``P = k + k1``; roots in
    ``r`` of the frequency mismatch are found on each ray and weighted by the
    inverse slope.
    """
    _check_convention(convention)
    d = model.grid.d
    law = model.law
    kv = _as_vector(k, d)
    box = quad.box
    if np.any(np.abs(kv) > box):
        raise ValueError("target wavevector lies outside the integration box")
    pts, wts = _outer_nodes(d, quad.nodes, box)
    dirs, dw = _ray_dirs(d, quad.nodes)
    f = model.coupling.mode_factor
    wk = float(law.frequency(np.linalg.norm(kv)))
    pref = 4.0 * math.pi * model.epsilon ** 2 * model.coupling.prefactor ** 2
    rmax_extra = box * math.sqrt(d)

    def inside(x):
        return np.all(np.abs(x) <= box, axis=1)

    kmag_o = np.linalg.norm(pts, axis=1)
    n_o = n_func(kmag_o)
    f_o = f(kmag_o)
    fk = f(np.linalg.norm(kv))
    E_o = wk + law.frequency(kmag_o)
    # bound the (rays x scan x d) work arrays to a few MB per chunk
    chunk = max(1, 200_000 // (dirs.shape[0] * quad.scan))
    totals = np.zeros(3)
    roots = 0
    n_tan = 0

    for lo in range(0, pts.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        # eta and the equilibrium gamma share the manifold w + w1 = w2 + w3,
        # parametrized by k1 with (k2, k3) = P/2 +- r e, P = k + k1
        half = 0.5 * (kv[None, :] + pts[sl])
        rmax = np.linalg.norm(half, axis=1) + rmax_extra
        b, dd, u, v, weight, nt = _resonant_points(law, half, E_o[sl], dirs, rmax, quad)
        n_tan += nt
        roots += b.size
        b = b + lo
        nu_, nv_ = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
        n1, n2, n3 = n_o[b], n_func(nu_), n_func(nv_)
        base = np.where(inside(u) & inside(v),
                        wts[b] * dw[dd] * weight * (fk * f_o[b] * f(nu_) * f(nv_)) ** 2, 0.0)
        totals[0] += np.sum(base * n1 * n2 * n3)
        if convention == "equilibrium":
            totals[1] += np.sum(base * (n1 * (n2 + n3) - n2 * n3))
            continue
        # delta(w + w3 - w1 - w2): outer variable k3, k1 = Q/2 + r e, k2 = -(Q/2 - r e), Q = k3 - k
        half = 0.5 * (pts[sl] - kv[None, :])
        rmax = np.linalg.norm(half, axis=1) + rmax_extra
        b, dd, u, v, weight, nt = _resonant_points(law, half, E_o[sl], dirs, rmax, quad)
        n_tan += nt
        roots += b.size
        b = b + lo
        m1, m2 = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
        n1, n2, n3 = n_func(m1), n_func(m2), n_o[b]
        base = np.where(inside(u) & inside(v),
                        wts[b] * dw[dd] * weight * (fk * f(m1) * f(m2) * f_o[b]) ** 2, 0.0)
        totals[2] += np.sum(base * (n1 * (n2 + n3) - n2 * n3))

    eta = pref * float(totals[0])
    gamma = pref * float(totals[1]) if convention == "equilibrium" else 2.0 * pref * float(totals[2])
    return ContinuumResult(eta, gamma, roots, n_tan)


def eta_continuum(model, k, n_func, quad: QuadratureSpec = QuadratureSpec()) -> float:
    return continuum_rates(model, k, n_func, quad).eta


def gamma_continuum(model, k, n_func, quad: QuadratureSpec = QuadratureSpec(),
                    convention: str = "equilibrium") -> float:
    return continuum_rates(model, k, n_func, quad, convention).gamma


def rates_continuum(model: WaveModel, ks, n_func, quad: QuadratureSpec = QuadratureSpec(),
                    convention: str = "equilibrium") -> CollisionRates:
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    out = [continuum_rates(model, k, n_func, quad, convention) for k in ks]
    spec = {"nodes": quad.nodes, "root_tol": quad.root_tol, "scan": quad.scan, "box": quad.box,
            "near_singular": int(sum(r.near_singular for r in out))}
    return CollisionRates(np.abs(ks), [r.eta for r in out], [r.gamma for r in out], "continuum",
                          convention, quadrature=spec)


def continuum_from_discrete(model: WaveModel, value):
    """Map a discrete-sum rate onto the continuum normalization."""
    return np.asarray(value) * DISCRETE_NORMALIZATION * model.grid.dk ** (2 * model.grid.d)
