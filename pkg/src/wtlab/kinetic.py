"""Kinetic equation, one-point moment hierarchy and generating-function checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .collision import rates_discrete

log = logging.getLogger(__name__)


class StabilityError(ValueError):
    """Time step too large for the explicit integrator."""


class DomainError(ValueError):
    """Generating function evaluated where it diverges (lambda n >= 1)."""


def kinetic_rhs(rates, n) -> np.ndarray:
    """dn/dt = eta - gamma n.  ``rates`` is a CollisionRates or an (eta, gamma) pair."""
    eta, gamma = _pair(rates)
    n = np.asarray(n, dtype=float)
    if eta.shape != n.shape or gamma.shape != n.shape:
        raise ValueError(f"rates have shape {eta.shape}, spectrum has {n.shape}")
    return eta - gamma * n


def _pair(rates):
    if hasattr(rates, "eta"):
        return np.asarray(rates.eta, dtype=float), np.asarray(rates.gamma, dtype=float)
    eta, gamma = rates
    return np.asarray(eta, dtype=float), np.asarray(gamma, dtype=float)


@dataclass
class SpectrumTrajectory:
    t: np.ndarray
    n: np.ndarray  # (len(t), modes)
    clipped: int = 0


def evolve_spectrum(model, n0, t_end: float, dt: float, rates_fn: Callable | None = None,
                    T: float | None = None, convention: str = "equilibrium",
                    record_every: int = 1) -> SpectrumTrajectory:
    """RK4 for the kinetic equation with rates recomputed at every stage.

    ``rates_fn(n) -> (eta, gamma)`` overrides the discrete collision sums
    built from ``model`` (frozen-rate toys use this).
    """
    if rates_fn is None:
        if model is None:
            raise ValueError("need a model or a rates function")

        def rates_fn(n):
            r = rates_discrete(model, n, T, convention)
            return r.eta, r.gamma

    if not dt > 0:
        raise ValueError("dt must be positive")
    nsteps = int(round(t_end / dt))
    if not math.isclose(nsteps * dt, t_end, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_end must be a multiple of dt")

    def rhs(n):
        eta, gamma = rates_fn(n)
        gmax = float(np.max(np.abs(gamma))) if np.size(gamma) else 0.0
        if dt * gmax >= 0.1:
            raise StabilityError(f"dt * max gamma = {dt * gmax:.3g} >= 0.1; reduce dt")
        return kinetic_rhs((eta, gamma), n)

    n = np.array(n0, dtype=float)
    ts, ns = [0.0], [n.copy()]
    clipped = 0
    for s in range(nsteps):
        k1 = rhs(n)
        k2 = rhs(n + 0.5 * dt * k1)
        k3 = rhs(n + 0.5 * dt * k2)
        k4 = rhs(n + dt * k3)
        n = n + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        neg = n < 0
        if np.any(neg):
            clipped += int(np.count_nonzero(neg))
            log.warning("step %d: %d negative spectrum values clipped to 0 (min %.3g)",
                        s + 1, int(np.count_nonzero(neg)), float(n.min()))
            n[neg] = 0.0
        if (s + 1) % record_every == 0 or s + 1 == nsteps:
            ts.append((s + 1) * dt)
            ns.append(n.copy())
    return SpectrumTrajectory(np.array(ts), np.array(ns), clipped)


# ---------------------------------------------------------------------------
# moments


def gaussian_moments(n, pmax: int) -> np.ndarray:
    """p! n**p for p = 0..pmax; shape (pmax+1,) + shape(n)."""
    n = np.asarray(n, dtype=float)
    return np.array([math.factorial(p) * n ** p for p in range(pmax + 1)])


def moment_rhs(p: int, moments, rates) -> np.ndarray:
    """dM(p)/dt = p^2 eta M(p-1) - p gamma M(p); ``moments[q]`` holds M(q)."""
    eta, gamma = _pair(rates)
    if p < 0:
        raise ValueError("moment order must be non-negative")
    if p == 0:
        return np.zeros_like(np.asarray(moments[0], dtype=float))
    return (p * p) * eta * moments[p - 1] - p * gamma * moments[p]


def hierarchy_rhs(moments, rates) -> np.ndarray:
    moments = np.asarray(moments, dtype=float)
    return np.array([moment_rhs(p, moments, rates) for p in range(moments.shape[0])])


@dataclass
class MomentTrajectory:
    t: np.ndarray
    M: np.ndarray  # (len(t), pmax+1, modes...)


def evolve_moments(moments0, rates, t_end: float, dt: float, record_every: int = 1) -> MomentTrajectory:
    """RK4 for the triangular hierarchy.

    ``rates`` is fixed (eta, gamma) or a callable ``t -> (eta, gamma)``.
    M(0) is held at 1.
    """
    M = np.array(moments0, dtype=float)
    if not np.allclose(M[0], 1.0):
        raise ValueError("M(0) must be 1")
    M[0] = 1.0
    rate_at = rates if callable(rates) else (lambda t: rates)
    nsteps = int(round(t_end / dt))
    if not math.isclose(nsteps * dt, t_end, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_end must be a multiple of dt")

    def rhs(t, y):
        eta, gamma = _pair(rate_at(t))
        gmax = float(np.max(np.abs(gamma)))
        if dt * gmax >= 0.1:
            raise StabilityError(f"dt * max gamma = {dt * gmax:.3g} >= 0.1; reduce dt")
        return hierarchy_rhs(y, (eta, gamma))

    ts, Ms = [0.0], [M.copy()]
    for s in range(nsteps):
        t = s * dt
        k1 = rhs(t, M)
        k2 = rhs(t + 0.5 * dt, M + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, M + 0.5 * dt * k2)
        k4 = rhs(t + dt, M + dt * k3)
        M = M + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if (s + 1) % record_every == 0 or s + 1 == nsteps:
            ts.append((s + 1) * dt)
            Ms.append(M.copy())
    return MomentTrajectory(np.array(ts), np.array(Ms))


# ---------------------------------------------------------------------------
# generating function


def steady_generating_function(lam, n):
    """Z = 1 / (1 - lambda n)."""
    lam = np.asarray(lam, dtype=float)
    x = lam * n
    if np.any(x >= 1.0):
        raise DomainError("lambda * n >= 1: the generating function diverges")
    out = 1.0 / (1.0 - x)
    return float(out) if out.ndim == 0 else out


def generating_operator(lam, Z, Z_lam, eta, gamma):
    """Right-hand side lambda eta Z + (lambda^2 eta - lambda gamma) dZ/dlambda.

    Plain arithmetic only, so symbolic arguments work too.
    """
    return lam * eta * Z + (lam * lam * eta - lam * gamma) * Z_lam


def generating_function_residual(lam, Z, Zdot, eta: float, gamma: float) -> float:
    """sup over the lambda grid of |dZ/dt - operator(Z)|, dZ/dlambda by central differences."""
    lam = np.asarray(lam, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if lam.size < 5:
        raise ValueError("lambda grid too coarse: need at least 5 points")
    Z_lam = np.gradient(Z, lam, edge_order=2)
    res = np.asarray(Zdot, dtype=float) - generating_operator(lam, Z, Z_lam, eta, gamma)
    return float(np.max(np.abs(res)))
