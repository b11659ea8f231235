"""Pure-numpy kernels.  Vectorized over realizations / targets; loops only over time."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def broadened_kernel(x, T):
    """|Delta(x)|^2 / (2 pi T) evaluated elementwise; continuous at x = 0."""
    x = np.asarray(x, dtype=float)
    y = 0.5 * x * T
    small = np.abs(y) < 1e-4
    ys = np.where(small, 1.0, y)
    val = np.where(small, 1.0 - y * y / 3.0, (np.sin(ys) / ys) ** 2)
    return (T / TWO_PI) * val


def nonlinear_term(c, fac, pair_index, n_sum):
    """N_l = fac_l * sum_a conj(c'_a) S[l+a],  S[q] = sum_{m+nu=q} c'_m c'_nu,  c' = fac c."""
    c = np.atleast_2d(c)
    R, M = c.shape
    cp = c * fac
    prod = cp[:, :, None] * cp[:, None, :]
    flat = (pair_index[None, :, :] + n_sum * np.arange(R)[:, None, None]).ravel()
    size = R * n_sum
    S = np.bincount(flat, prod.real.ravel(), minlength=size) + 1j * np.bincount(
        flat, prod.imag.ravel(), minlength=size
    )
    S = S.reshape(R, n_sum)
    g = S[:, pair_index]
    out = np.einsum("rla,ra->rl", g, cp.conj())
    return out * fac


def quartet_term(c, quartets, weights):
    """Sum over an explicit quartet list: out_l += w conj(c_a) c_m c_nu."""
    c = np.atleast_2d(c)
    R, M = c.shape
    l, a, m, nu = quartets
    terms = weights * np.conj(c[:, a]) * c[:, m] * c[:, nu]
    out = np.empty((R, M), dtype=complex)
    for r in range(R):
        out[r] = np.bincount(l, terms[r].real, minlength=M) + 1j * np.bincount(
            l, terms[r].imag, minlength=M
        )
    return out


def _segments(ptr, q):
    start = ptr[q]
    counts = ptr[q + 1] - start
    total = int(counts.sum())
    owner = np.repeat(np.arange(q.size), counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return owner, np.repeat(start, counts) + offs


def collision_sums(targets, pair_index, ptr, pm, pn, omega, fac2, n, T, literal):
    """Raw broadened sums (no 4 pi eps^2 prefactor) for the target modes."""
    M = omega.size
    eta = np.empty(targets.size)
    gam = np.empty(targets.size)
    a_all = np.arange(M)
    for ti, l in enumerate(targets):
        q = pair_index[l, a_all]
        owner, idx = _segments(ptr, q)
        a = a_all[owner]
        m = pm[idx]
        nu = pn[idx]
        w = fac2[a] * fac2[m] * fac2[nu]
        x = omega[l] + omega[a] - omega[m] - omega[nu]
        kt = broadened_kernel(x, T)
        eta[ti] = fac2[l] * np.sum(w * kt * n[a] * n[m] * n[nu])
        br = n[a] * (n[m] + n[nu]) - n[m] * n[nu]
        if literal:
            x2 = omega[l] + omega[nu] - omega[a] - omega[m]
            kt = broadened_kernel(x2, T)
        gam[ti] = fac2[l] * np.sum(w * kt * br)
    return eta, gam


def _deriv(y, omega, fac, pair_index, n_sum, coef):
    return -1j * (omega * y + coef * nonlinear_term(y, fac, pair_index, n_sum))


def _nl(y, fac, pair_index, n_sum, coef):
    return -1j * coef * nonlinear_term(y, fac, pair_index, n_sum)


def advance(state, omega, fac, pair_index, n_sum, coef, t0, dt, nsteps, rotating,
            noise, damp, cap, phases, cap_count, cadence=1, step0=0):
    """Advance ``state`` in place by ``nsteps`` RK4 steps plus damping, noise and cap.

    ``rotating=False``: ``state`` holds c and the full RHS is stepped.
    ``rotating=True``: ``state`` holds b at ``t0``; the linear part is treated
    exactly (Lawson RK4 on c, identical to classical RK4 on b).
    The cap is applied after global steps ``step0 + s + 1`` divisible by ``cadence``.
    """
    use_noise = noise.shape[1] > 0
    use_phase = phases.shape[1] > 0
    use_cap = bool(np.any(cap >= 0.0))
    use_damp = bool(np.any(damp != 0.0))
    decay = np.exp(-damp * dt)
    capped_modes = cap >= 0.0
    eh = np.exp(-0.5j * omega * dt)
    ef = eh * eh
    y = state * np.exp(-1j * omega * t0) if rotating else state
    for s in range(nsteps):
        if rotating:
            k1 = _nl(y, fac, pair_index, n_sum, coef)
            k2 = _nl(eh * (y + 0.5 * dt * k1), fac, pair_index, n_sum, coef)
            k3 = _nl(eh * y + 0.5 * dt * k2, fac, pair_index, n_sum, coef)
            k4 = _nl(ef * y + dt * eh * k3, fac, pair_index, n_sum, coef)
            y = ef * y + (dt / 6.0) * (ef * k1 + 2.0 * eh * (k2 + k3) + k4)
        else:
            k1 = _deriv(y, omega, fac, pair_index, n_sum, coef)
            k2 = _deriv(y + 0.5 * dt * k1, omega, fac, pair_index, n_sum, coef)
            k3 = _deriv(y + 0.5 * dt * k2, omega, fac, pair_index, n_sum, coef)
            k4 = _deriv(y + dt * k3, omega, fac, pair_index, n_sum, coef)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if use_damp:
            y = y * decay
        if use_noise:
            y = y + noise[:, s, :]
        if use_cap and (step0 + s + 1) % cadence == 0:
            p = (y * np.conj(y)).real
            over = (p > cap) & capped_modes
            if np.any(over):
                cap_count += over
                amp = np.sqrt(np.where(over, cap, 1.0))
                if use_phase:
                    newv = amp * np.exp(1j * phases[:, s, :])
                else:
                    newv = y * amp / np.sqrt(np.where(over, p, 1.0))
                y = np.where(over, newv, y)
    if rotating:
        y = y * np.exp(1j * omega * (t0 + nsteps * dt))
    state[...] = y
    return state


def pdf_advance(P, width, A, C, top, dt, nsteps, mode, inject):
    """Explicit conservative update.  mode 0: zero flux, 1: injection, 2: absorbing.

    Face fluxes are ``F_{i+1/2} = A_i P_i - C_i P_{i+1}``.  In mode 1 the
    probability ``inject`` entering through the top face is removed by a sink
    proportional to P; in mode 2 the flux leaving through the top face is
    reinjected proportionally to P.  Either way the mass is conserved exactly
    by the update.  Returns the minimum density seen during the run.
    """
    pmin = np.inf
    F = np.zeros(P.size + 1)
    for _ in range(nsteps):
        F[1:-1] = A * P[:-1] - C * P[1:]
        if mode == 0:
            F[-1] = 0.0
        elif mode == 1:
            F[-1] = -inject
        else:
            F[-1] = top * P[-1]
        dP = -(F[1:] - F[:-1]) / width
        if mode != 0:
            mass = np.sum(P * width)
            dP += (F[-1] / mass) * P
        P += dt * dP
        pmin = min(pmin, float(P.min()))
    return pmin
