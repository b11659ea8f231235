"""numba kernels.  Same arithmetic and summation order as ``_numpy``."""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

TWO_PI = 2.0 * math.pi


@njit(cache=True, inline="always")
def _bkernel(x, T):
    y = 0.5 * x * T
    if abs(y) < 1e-4:
        return (T / TWO_PI) * (1.0 - y * y / 3.0)
    s = math.sin(y) / y
    return (T / TWO_PI) * s * s


@njit(cache=True)
def broadened_kernel(x, T):
    out = np.empty(x.size)
    for i in range(x.size):
        out[i] = _bkernel(x[i], T)
    return out


@njit(cache=True)
def _nl_one(c, fac, pair_index, n_sum, cp, S, out):
    M = c.size
    for j in range(M):
        cp[j] = fac[j] * c[j]
    for q in range(n_sum):
        S[q] = 0.0
    # bincount order: flat index over (m, nu) row-major
    for m in range(M):
        cm = cp[m]
        for nu in range(M):
            S[pair_index[m, nu]] += cm * cp[nu]
    for l in range(M):
        acc = 0.0 + 0.0j
        for a in range(M):
            acc += S[pair_index[l, a]] * np.conj(cp[a])
        out[l] = acc * fac[l]


@njit(parallel=True, cache=True)
def _nonlinear_batch(c, fac, pair_index, n_sum):
    R, M = c.shape
    out = np.empty((R, M), dtype=np.complex128)
    for r in prange(R):
        cp = np.empty(M, dtype=np.complex128)
        S = np.empty(n_sum, dtype=np.complex128)
        row = np.empty(M, dtype=np.complex128)
        _nl_one(c[r], fac, pair_index, n_sum, cp, S, row)
        out[r] = row
    return out


def nonlinear_term(c, fac, pair_index, n_sum):
    c = np.ascontiguousarray(np.atleast_2d(c), dtype=np.complex128)
    return _nonlinear_batch(c, np.asarray(fac, dtype=float), pair_index, int(n_sum))


@njit(parallel=True, cache=True)
def _quartet_batch(c, l, a, m, nu, w):
    R, M = c.shape
    out = np.zeros((R, M), dtype=np.complex128)
    for r in prange(R):
        for j in range(l.size):
            out[r, l[j]] += w[j] * np.conj(c[r, a[j]]) * c[r, m[j]] * c[r, nu[j]]
    return out


def quartet_term(c, quartets, weights):
    c = np.ascontiguousarray(np.atleast_2d(c), dtype=np.complex128)
    l, a, m, nu = quartets
    return _quartet_batch(c, l, a, m, nu, np.asarray(weights, dtype=float))


@njit(parallel=True, cache=True)
def _collision(targets, pair_index, ptr, pm, pn, omega, fac2, n, T, literal):
    M = omega.size
    eta = np.empty(targets.size)
    gam = np.empty(targets.size)
    for ti in prange(targets.size):
        l = targets[ti]
        se = 0.0
        sg = 0.0
        for a in range(M):
            q = pair_index[l, a]
            for j in range(ptr[q], ptr[q + 1]):
                m = pm[j]
                nu = pn[j]
                w = fac2[a] * fac2[m] * fac2[nu]
                kt = _bkernel(omega[l] + omega[a] - omega[m] - omega[nu], T)
                se += w * kt * n[a] * n[m] * n[nu]
                br = n[a] * (n[m] + n[nu]) - n[m] * n[nu]
                if literal:
                    kt = _bkernel(omega[l] + omega[nu] - omega[a] - omega[m], T)
                sg += w * kt * br
        eta[ti] = fac2[l] * se
        gam[ti] = fac2[l] * sg
    return eta, gam


def collision_sums(targets, pair_index, ptr, pm, pn, omega, fac2, n, T, literal):
    return _collision(np.asarray(targets, dtype=np.int64), pair_index, ptr, pm, pn,
                      np.asarray(omega, dtype=float), np.asarray(fac2, dtype=float),
                      np.asarray(n, dtype=float), float(T), bool(literal))


@njit(cache=True)
def _deriv(y, omega, fac, pair_index, n_sum, coef, rotating, cp, S, nl, out):
    M = y.size
    _nl_one(y, fac, pair_index, n_sum, cp, S, nl)
    if rotating:
        for j in range(M):
            out[j] = -1j * (coef * nl[j])
    else:
        for j in range(M):
            out[j] = -1j * (omega[j] * y[j] + coef * nl[j])


@njit(parallel=True, cache=True)
def _advance(state, omega, fac, pair_index, n_sum, coef, t0, dt, nsteps, rotating,
             noise, damp, cap, phases, cap_count, cadence, step0):
    R, M = state.shape
    use_noise = noise.shape[1] > 0
    use_phase = phases.shape[1] > 0
    use_cap = False
    use_damp = False
    for j in range(M):
        if cap[j] >= 0.0:
            use_cap = True
        if damp[j] != 0.0:
            use_damp = True
    decay = np.exp(-damp * dt)
    eh = np.exp(-0.5j * omega * dt)
    ef = eh * eh
    rot0 = np.exp(-1j * omega * t0)
    rot1 = np.exp(1j * omega * (t0 + nsteps * dt))
    for r in prange(R):
        y = state[r].copy()
        if rotating:
            for j in range(M):
                y[j] = y[j] * rot0[j]
        cp = np.empty(M, dtype=np.complex128)
        S = np.empty(n_sum, dtype=np.complex128)
        nl = np.empty(M, dtype=np.complex128)
        k1 = np.empty(M, dtype=np.complex128)
        k2 = np.empty(M, dtype=np.complex128)
        k3 = np.empty(M, dtype=np.complex128)
        k4 = np.empty(M, dtype=np.complex128)
        ys = np.empty(M, dtype=np.complex128)
        for s in range(nsteps):
            _deriv(y, omega, fac, pair_index, n_sum, coef, rotating, cp, S, nl, k1)
            if rotating:
                for j in range(M):
                    ys[j] = eh[j] * (y[j] + 0.5 * dt * k1[j])
            else:
                for j in range(M):
                    ys[j] = y[j] + 0.5 * dt * k1[j]
            _deriv(ys, omega, fac, pair_index, n_sum, coef, rotating, cp, S, nl, k2)
            if rotating:
                for j in range(M):
                    ys[j] = eh[j] * y[j] + 0.5 * dt * k2[j]
            else:
                for j in range(M):
                    ys[j] = y[j] + 0.5 * dt * k2[j]
            _deriv(ys, omega, fac, pair_index, n_sum, coef, rotating, cp, S, nl, k3)
            if rotating:
                for j in range(M):
                    ys[j] = ef[j] * y[j] + dt * eh[j] * k3[j]
            else:
                for j in range(M):
                    ys[j] = y[j] + dt * k3[j]
            _deriv(ys, omega, fac, pair_index, n_sum, coef, rotating, cp, S, nl, k4)
            if rotating:
                for j in range(M):
                    y[j] = ef[j] * y[j] + (dt / 6.0) * (ef[j] * k1[j] + 2.0 * eh[j] * (k2[j] + k3[j]) + k4[j])
            else:
                for j in range(M):
                    y[j] = y[j] + (dt / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if use_damp:
                for j in range(M):
                    y[j] = y[j] * decay[j]
            if use_noise:
                for j in range(M):
                    y[j] = y[j] + noise[r, s, j]
            if use_cap and (step0 + s + 1) % cadence == 0:
                for j in range(M):
                    if cap[j] < 0.0:
                        continue
                    p = (y[j] * np.conj(y[j])).real
                    if p > cap[j]:
                        cap_count[r, j] += 1
                        amp = math.sqrt(cap[j])
                        if use_phase:
                            y[j] = amp * complex(math.cos(phases[r, s, j]), math.sin(phases[r, s, j]))
                        else:
                            y[j] = y[j] * (amp / math.sqrt(p))
        if rotating:
            for j in range(M):
                y[j] = y[j] * rot1[j]
        state[r] = y


def advance(state, omega, fac, pair_index, n_sum, coef, t0, dt, nsteps, rotating,
            noise, damp, cap, phases, cap_count, cadence=1, step0=0):
    _advance(state, np.asarray(omega, dtype=float), np.asarray(fac, dtype=float), pair_index,
             int(n_sum), float(coef), float(t0), float(dt), int(nsteps), bool(rotating),
             noise, np.asarray(damp, dtype=float), np.asarray(cap, dtype=float), phases, cap_count,
             int(cadence), int(step0))
    return state


@njit(cache=True)
def _pdf_advance(P, width, A, C, top, dt, nsteps, mode, inject):
    N = P.size
    F = np.zeros(N + 1)
    dP = np.empty(N)
    pmin = np.inf
    for _ in range(nsteps):
        for i in range(N - 1):
            F[i + 1] = A[i] * P[i] - C[i] * P[i + 1]
        if mode == 0:
            F[N] = 0.0
        elif mode == 1:
            F[N] = -inject
        else:
            F[N] = top * P[N - 1]
        for i in range(N):
            dP[i] = -(F[i + 1] - F[i]) / width[i]
        if mode != 0:
            mass = 0.0
            for i in range(N):
                mass += P[i] * width[i]
            sig = F[N] / mass
            for i in range(N):
                dP[i] += sig * P[i]
        for i in range(N):
            P[i] += dt * dP[i]
            if P[i] < pmin:
                pmin = P[i]
    return pmin


def pdf_advance(P, width, A, C, top, dt, nsteps, mode, inject):
    return _pdf_advance(P, width, A, C, float(top), float(dt), int(nsteps), int(mode), float(inject))
