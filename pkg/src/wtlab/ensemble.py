"""Direct ensemble simulation of the four-wave dynamics.

In the interaction representation ``i db_l/dt = eps sum W conj(b_a) b_m b_nu
exp(i dw t)`` over ``k_l + k_a = k_m + k_nu``, ``dw = w_l + w_a - w_m - w_nu``.
The integrator works with ``c = b exp(-i w t)``, for which
``i dc/dt = w c + eps N(c)`` is autonomous and conserves both the total action
``sum |c|^2`` and ``H = sum w |c|^2 + (eps/2) sum conj(c_l) N_l``.

Realization ``i`` of a run with master seed ``s`` draws everything it needs
(initial field, forcing, phase kicks) from ``SeedSequence([s, i, stream])``,
so results do not depend on how realizations are scheduled.
"""

from __future__ import annotations

import itertools
import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .collision import rates_discrete
from .pdf import AmplitudePdf
from .wave_model import WaveModel

log = logging.getLogger(__name__)

QUARTET_GUARD = 10 ** 9
STREAM_INIT, STREAM_FORCING, STREAM_SAMPLING = 0, 1, 2


class GridTooLargeError(ValueError):
    pass


class ConservationAlarm(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# states and sampling


@dataclass
class ModeState:
    b: np.ndarray
    t: float = 0.0

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.b)

    @property
    def phase_factor(self) -> np.ndarray:
        A = np.abs(self.b)
        return np.where(A > 0, self.b / np.where(A > 0, A, 1.0), 1.0 + 0j)

    @property
    def intensity(self) -> np.ndarray:
        return (self.b * np.conj(self.b)).real


@dataclass(frozen=True)
class RpaSampler:
    """Independent uniform phases; intensities per ``kind``.

    ``rayleigh``: exponential intensity with mean n; ``deterministic``:
    intensity exactly n; ``truncated``: exponential conditioned on s <= s_max.
    """

    n: np.ndarray
    kind: str = "rayleigh"
    seed: int = 0
    s_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "n", np.atleast_1d(np.asarray(self.n, dtype=float)))
        if self.kind not in ("rayleigh", "deterministic", "truncated"):
            raise ValueError(f"unknown amplitude distribution {self.kind!r}")
        if np.any(self.n < 0):
            raise ValueError("mean intensities must be non-negative")
        if self.kind == "truncated" and not (self.s_max and self.s_max > 0):
            raise ValueError("truncated sampler needs s_max > 0")

    def rng(self, realization: int, stream: int = STREAM_INIT) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.seed), int(realization), stream]))

    def draw(self, realization: int) -> np.ndarray:
        rng = self.rng(realization)
        M = self.n.size
        phase = rng.uniform(0.0, 2.0 * math.pi, M)
        if self.kind == "rayleigh":
            s = rng.exponential(1.0, M) * self.n
        elif self.kind == "deterministic":
            s = self.n.copy()
        else:
            u = rng.uniform(0.0, 1.0, M)
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = -np.expm1(-self.s_max / np.where(self.n > 0, self.n, 1.0))
                s = np.where(self.n > 0, -self.n * np.log1p(-u * frac), 0.0)
        return np.sqrt(s) * np.exp(1j * phase)


def sample_rpa_field(sampler: RpaSampler, grid=None, realization: int = 0) -> ModeState:
    if grid is not None and sampler.n.size != grid.size:
        raise ValueError("sampler spectrum and grid sizes differ")
    return ModeState(sampler.draw(realization))


def sample_ensemble(sampler: RpaSampler, R: int, start: int = 0) -> np.ndarray:
    """Initial fields of realizations start..start+R-1, shape (R, M)."""
    return np.array([sampler.draw(start + i) for i in range(R)])


# ---------------------------------------------------------------------------
# right-hand side and invariants


def frequency_shift(model: WaveModel, b) -> np.ndarray:
    """Self-interaction shift Omega_k = 2 eps sum_a W(k,a;k,a) |b_a|^2 at the given amplitudes."""
    b = np.asarray(b)
    f2 = model.fac ** 2
    s = np.sum(f2 * (b * np.conj(b)).real, axis=-1)
    return 2.0 * model.epsilon * model.coupling.prefactor * f2 * np.asarray(s)[..., None]


def _check_guard(model: WaveModel):
    q = model.grid.quartet_count()
    if q > QUARTET_GUARD:
        raise GridTooLargeError(f"{q} quartets per evaluation exceeds {QUARTET_GUARD}; use a smaller grid")


def nonlinear_term(model: WaveModel, c) -> np.ndarray:
    """N_l(c) = sum f_l f_a f_m f_nu conj(c_a) c_m c_nu (prefactor excluded)."""
    g = model.grid
    out = kernels.nonlinear_term(np.atleast_2d(c), model.fac, g.pair_index, g.n_sum)
    return out if np.ndim(c) == 2 else out[0]


def _resonant_quartets(model: WaveModel, tol: float = 1e-9):
    q = model.grid.quartets()
    w = model.omega
    dw = w[q[0]] + w[q[1]] - w[q[2]] - w[q[3]]
    keep = np.abs(dw) <= tol * max(1.0, float(np.max(w)))
    qs = tuple(x[keep] for x in q)
    f = model.fac
    weights = model.coupling.prefactor * f[qs[0]] * f[qs[1]] * f[qs[2]] * f[qs[3]]
    return qs, weights


def rhs_dynamical(model: WaveModel, state: ModeState | np.ndarray, t: float | None = None,
                  resonant_only: bool = False) -> np.ndarray:
    """db/dt in the interaction representation.

    ``resonant_only`` keeps only quartets with zero frequency mismatch (the
    resonant truncation of the dynamics).
    """
    _check_guard(model)
    if isinstance(state, ModeState):
        b, t = state.b, state.t if t is None else t
    else:
        b, t = np.asarray(state), 0.0 if t is None else t
    if model.epsilon == 0:
        return np.zeros_like(b, dtype=complex)
    if resonant_only:
        qs, w = _resonant_quartets(model)
        out = kernels.quartet_term(np.atleast_2d(b), qs, w)
        out = -1j * model.epsilon * out
        return out if np.ndim(b) == 2 else out[0]
    ph = np.exp(1j * model.omega * t)
    return -1j * model.epsilon * model.coupling.prefactor * ph * nonlinear_term(model, b * np.conj(ph))


def naive_rhs(model: WaveModel, b, t: float = 0.0) -> np.ndarray:
    """Quadruple loop over all index tuples, checking the momentum constraint directly."""
    g = model.grid
    ints = g.ints
    w = model.omega
    M = g.size
    out = np.zeros(M, dtype=complex)
    for l, a, m, nu in itertools.product(range(M), repeat=4):
        if np.array_equal(ints[l] + ints[a], ints[m] + ints[nu]):
            W = model.W(l, a, m, nu)
            out[l] += W * np.conj(b[a]) * b[m] * b[nu] * np.exp(1j * (w[l] + w[a] - w[m] - w[nu]) * t)
    return -1j * model.epsilon * out


def total_action(c) -> np.ndarray:
    c = np.asarray(c)
    return np.sum((c * np.conj(c)).real, axis=-1)


def hamiltonian(model: WaveModel, c) -> np.ndarray:
    c = np.asarray(c)
    quad = np.sum(model.omega * (c * np.conj(c)).real, axis=-1)
    N = nonlinear_term(model, c)
    quart = 0.5 * model.epsilon * model.coupling.prefactor * np.sum((np.conj(c) * N).real, axis=-1)
    return quad + quart


# ---------------------------------------------------------------------------
# forcing, damping, cap


@dataclass(frozen=True)
class Forcing:
    """White-noise forcing on modes with kmin <= |k| <= kmax: E|db|^2 = rate dt per step."""

    kmin: float
    kmax: float
    rate: float

    def mask(self, kmag):
        return (kmag >= self.kmin) & (kmag <= self.kmax)


@dataclass(frozen=True)
class Damping:
    """Linear damping b -> b exp(-rate dt) on modes with |k| >= kmin."""

    kmin: float
    rate: float

    def rates(self, kmag):
        return np.where(kmag >= self.kmin, self.rate, 0.0)


@dataclass(frozen=True)
class BreakingCap:
    """Ceiling on |b|^2 per mode; ``policy`` is ``clip`` or ``redistribute``."""

    s_nl: object
    policy: str = "clip"
    cadence: int = 1

    def __post_init__(self):
        if self.policy not in ("clip", "redistribute"):
            raise ValueError(f"unknown cap policy {self.policy!r}")
        if self.cadence < 1:
            raise ValueError("cap cadence must be >= 1")

    def levels(self, M):
        lv = np.broadcast_to(np.asarray(self.s_nl, dtype=float), (M,)).copy()
        if np.any(lv[np.isfinite(lv)] <= 0):
            raise ValueError("cap levels must be positive")
        return np.where(np.isfinite(lv), lv, -1.0)


def apply_breaking_cap(b, s_nl, policy: str = "clip", rng: np.random.Generator | None = None):
    """Return (capped copy, mask of capped entries).  ``redistribute`` draws a fresh phase."""
    b = np.array(b, dtype=complex)
    p = (b * np.conj(b)).real
    lv = np.broadcast_to(np.asarray(s_nl, dtype=float), b.shape)
    over = p > lv
    if not np.any(over):
        return b, over
    amp = np.sqrt(lv[over])
    if policy == "clip":
        b[over] = b[over] * (amp / np.sqrt(p[over]))
    elif policy == "redistribute":
        if rng is None:
            raise ValueError("redistribute policy needs an rng")
        b[over] = amp * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, int(np.count_nonzero(over))))
    else:
        raise ValueError(f"unknown cap policy {policy!r}")
    return b, over


# ---------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    t: np.ndarray
    b: np.ndarray            # (snapshots, R, M), interaction representation
    action: np.ndarray       # (snapshots, R)
    energy: np.ndarray       # (snapshots, R)
    scheme: str
    dt: float
    cap_count: np.ndarray | None = None
    alarms: int = 0

    @property
    def action_drift(self) -> float:
        a = self.action
        return float(np.max(np.abs(a - a[0]) / np.where(a[0] > 0, a[0], 1.0)))

    @property
    def energy_drift(self) -> float:
        e = self.energy
        return float(np.max(np.abs(e - e[0]) / np.where(np.abs(e[0]) > 0, np.abs(e[0]), 1.0)))

    def intensities(self) -> np.ndarray:
        return (self.b * np.conj(self.b)).real


def nonlinear_rate(model: WaveModel, b) -> float:
    """Upper bound on the nonlinear frequency scale: 3 eps |p| max f^2 sum f^2 |b|^2."""
    f2 = model.fac ** 2
    s = np.max(np.sum(f2 * (np.asarray(b) * np.conj(b)).real, axis=-1))
    return 3.0 * model.epsilon * abs(model.coupling.prefactor) * float(np.max(f2)) * float(s)


def default_dt(model: WaveModel, b, scheme: str = "rk4") -> float:
    nl = nonlinear_rate(model, b)
    if scheme == "rk4":
        cands = [0.01 / float(np.max(model.omega))] if np.max(model.omega) > 0 else []
        if nl > 0:
            cands.append(0.01 / nl)
        return min(cands) if cands else 0.01
    return 0.01 / nl if nl > 0 else 0.1


def integrate(model: WaveModel, b0, t_end: float, dt: float | None = None, scheme: str = "rk4",
              record_every: int | None = None, resonant_only: bool = False,
              forcing: Forcing | None = None, damping: Damping | None = None,
              cap: BreakingCap | None = None, seed: int = 0, start: int = 0,
              alarm: float = 1e-6, t0: float = 0.0,
              stream: int = STREAM_FORCING) -> Trajectory:
    """RK4 integration of an ensemble ``b0`` (R, M) given at time ``t0`` up to ``t0 + t_end``.

    ``scheme``: ``rk4`` steps ``c`` (non-rotating variables); ``ifrk4``
    steps ``b`` with the linear part exact (integrating factor).  Damping,
    noise and the cap act between steps.  ``seed`` and ``start`` (index of the
    first realization) name the forcing/phase streams.
    """
    if scheme not in ("rk4", "ifrk4"):
        raise ValueError(f"unknown scheme {scheme!r}")
    _check_guard(model)
    b0 = np.array(np.atleast_2d(b0), dtype=complex)
    R, M = b0.shape
    if M != model.grid.size:
        raise ValueError("state size does not match the grid")
    if dt is None:
        dt = default_dt(model, b0, scheme)
    omega = model.omega
    shift = float(np.max(np.abs(frequency_shift(model, b0)))) if model.epsilon else 0.0
    if dt * (shift + nonlinear_rate(model, b0)) >= 0.1:
        raise ValueError(f"dt = {dt:.3g} too large for the nonlinear time scale")
    nsteps = int(round(t_end / dt))
    if not math.isclose(nsteps * dt, t_end, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_end must be a multiple of dt")
    record_every = nsteps if not record_every else int(record_every)
    stochastic = forcing is not None or (cap is not None and cap.policy == "redistribute")
    conservative = forcing is None and damping is None and cap is None

    kmag = model.grid.kmag
    damp = damping.rates(kmag) if damping is not None else np.zeros(M)
    levels = cap.levels(M) if cap is not None else -np.ones(M)
    cadence = cap.cadence if cap is not None else 1
    fmask = forcing.mask(kmag) if forcing is not None else None
    cap_count = np.zeros((R, M), dtype=np.int64)
    rngs = [np.random.default_rng(np.random.SeedSequence([int(seed), start + i, stream]))
            for i in range(R)] if stochastic else None
    chunk_cap = max(1, 2 ** 21 // max(1, R * M))

    if resonant_only:
        qs, wq = _resonant_quartets(model)

    if model.epsilon == 0 and conservative:
        # the free flow is b = const; skip the stepper, whose linear-part error is O(dt^4)
        marks = list(range(record_every, nsteps, record_every)) + [nsteps]
        ts = np.array([t0] + [t0 + s * dt for s in marks])
        c = [b0 * np.exp(-1j * omega * t) for t in ts]
        return Trajectory(ts, np.repeat(b0[None], ts.size, axis=0), np.array([total_action(x) for x in c]),
                          np.array([hamiltonian(model, x) for x in c]), scheme, dt, None, 0)

    rotating = scheme == "ifrk4"
    # complex Gaussian noise and uniform phases are rotation invariant, so they act the same on b and c
    y = b0.copy() if rotating else b0 * np.exp(-1j * omega * t0)
    g = model.grid
    coef = model.epsilon * model.coupling.prefactor

    def to_b(y, t):
        return y if rotating else y * np.exp(1j * omega * t)

    def to_c(y, t):
        return y * np.exp(-1j * omega * t) if rotating else y

    ts = [t0]
    snaps = [b0.copy()]
    c0 = to_c(y, t0)
    acts = [total_action(c0)]
    ens = [hamiltonian(model, c0)]
    alarms = 0
    done = 0
    while done < nsteps:
        todo = min(record_every - done % record_every, nsteps - done)
        while todo > 0:
            n = min(todo, chunk_cap)
            ts0 = t0 + done * dt
            if resonant_only:
                # resonant quartets have zero mismatch, so b obeys an autonomous flow
                bb = to_b(y, ts0)
                for _ in range(n):
                    bb = _rk4_resonant(bb, qs, wq, model.epsilon, dt)
                y = bb if rotating else bb * np.exp(-1j * omega * (ts0 + n * dt))
            else:
                if forcing is not None:
                    noise = np.zeros((R, n, M), dtype=complex)
                    amp = math.sqrt(0.5 * forcing.rate * dt)
                    k = int(np.count_nonzero(fmask))
                    for i, rng in enumerate(rngs):
                        z = rng.standard_normal((n, k, 2))
                        noise[i][:, fmask] = amp * (z[..., 0] + 1j * z[..., 1])
                else:
                    noise = np.zeros((R, 0, M), dtype=complex)
                if cap is not None and cap.policy == "redistribute":
                    phases = np.empty((R, n, M))
                    for i, rng in enumerate(rngs):
                        phases[i] = rng.uniform(0.0, 2.0 * math.pi, (n, M))
                else:
                    phases = np.zeros((R, 0, M))
                kernels.advance(y, omega, model.fac, g.pair_index, g.n_sum, coef, ts0, dt, n, rotating,
                                noise, damp, levels, phases, cap_count, cadence, done)
            done += n
            todo -= n
        t = t0 + done * dt
        ts.append(t)
        snaps.append(to_b(y, t).copy())
        c = to_c(y, t)
        acts.append(total_action(c))
        ens.append(hamiltonian(model, c))
        if conservative:
            drift = np.max(np.abs(acts[-1] - acts[0]) / np.where(acts[0] > 0, acts[0], 1.0))
            if drift > alarm:
                alarms += 1
                log.warning("action drift %.3g exceeds %.1g at t = %.6g", drift, alarm, t)
    return Trajectory(np.array(ts), np.array(snaps), np.array(acts), np.array(ens), scheme, dt,
                      cap_count if cap is not None else None, alarms)


def _rk4_resonant(b, qs, w, eps, dt):
    def f(x):
        return -1j * eps * kernels.quartet_term(x, qs, w)

    k1 = f(b)
    k2 = f(b + 0.5 * dt * k1)
    k3 = f(b + 0.5 * dt * k2)
    k4 = f(b + dt * k3)
    return b + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class CapRun:
    samples: np.ndarray     # (snapshots, R, M) intensities after spin-up
    cap_count: np.ndarray   # (R, M) cap events during sampling
    times: np.ndarray
    spinup: float


def cap_experiment(model: WaveModel, forcing: Forcing | None, damping: Damping | None, cap: BreakingCap | None,
                   R: int, t_spinup: float, t_sample: float, dt: float, sample_every: int,
                   seed: int = 0, b_init: float = 1e-3, scheme: str = "ifrk4") -> CapRun:
    """Forced/damped run from a small deterministic state; intensities sampled after spin-up."""
    b0 = np.full((R, model.grid.size), b_init, dtype=complex)
    tr = integrate(model, b0, t_spinup, dt, scheme, forcing=forcing, damping=damping, cap=cap,
                   seed=seed, alarm=math.inf)
    tr = integrate(model, tr.b[-1], t_sample, dt, scheme, record_every=sample_every, forcing=forcing,
                   damping=damping, cap=cap, seed=seed, t0=t_spinup, alarm=math.inf,
                   stream=STREAM_SAMPLING)
    s = (tr.b[1:] * np.conj(tr.b[1:])).real
    cc = tr.cap_count if tr.cap_count is not None else np.zeros((R, model.grid.size), dtype=np.int64)
    return CapRun(s, cc, tr.t[1:], t_spinup)


@dataclass
class Excess:
    ratio: float
    lo: float
    hi: float
    n: float
    count: int


def probability_excess(samples, s_over_n: float = 8.0, half_width: float = 0.5, level: float = 0.95,
                       n: float | None = None) -> Excess:
    """Probability in the band s/n in [x - h, x + h] relative to the Rayleigh value.

    ``samples`` is (snapshots, R); the interval is a percentile bootstrap over
    realizations, which keeps snapshots of one realization together.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if n is None:
        n = float(np.mean(x))
    lo_s, hi_s = (s_over_n - half_width) * n, (s_over_n + half_width) * n
    ray = math.exp(-(s_over_n - half_width)) - math.exp(-(s_over_n + half_width))
    hits = np.sum((x >= lo_s) & (x < hi_s), axis=0)
    per = x.shape[0]
    ratio = float(np.sum(hits)) / (per * x.shape[1]) / ray
    rng = np.random.default_rng(0)
    boots = np.array([np.sum(hits[rng.integers(0, hits.size, hits.size)]) for _ in range(2000)])
    boots = boots / (per * x.shape[1]) / ray
    a = 0.5 * (1.0 - level)
    return Excess(ratio, float(np.quantile(boots, a)), float(np.quantile(boots, 1.0 - a)), n, int(np.sum(hits)))


# ---------------------------------------------------------------------------
# statistics


@dataclass
class EnsembleStats:
    """Intensity samples s = |b|^2, shape (samples, M); samples may pool several times."""

    s: np.ndarray
    realizations: int

    @classmethod
    def from_states(cls, b) -> "EnsembleStats":
        b = np.asarray(b)
        s = (b * np.conj(b)).real.reshape(-1, b.shape[-1])
        R = b.shape[-2] if b.ndim >= 2 else 1
        return cls(s, R)

    @property
    def count(self) -> int:
        return self.s.shape[0]

    def moments(self, k: int, pmax: int = 4):
        x = self.s[:, k]
        out = []
        for p in range(pmax + 1):
            v = x ** p
            out.append((float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0))
        return out


@dataclass
class EstimatedPdf:
    edges: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    total: int

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def empty(self):
        return self.counts == 0

    def as_pdf(self) -> AmplitudePdf:
        return AmplitudePdf(self.edges, self.density)


def estimate_pdf(stats: EnsembleStats, k: int, edges, min_samples: int = 100) -> EstimatedPdf:
    """Histogram density with binomial standard errors; samples beyond the last edge are counted in the total."""
    if stats.count < min_samples:
        raise ValueError(f"need at least {min_samples} samples, have {stats.count}")
    edges = np.asarray(edges, dtype=float)
    x = stats.s[:, k]
    counts, _ = np.histogram(x, bins=edges)
    total = x.size
    p = counts / total
    w = np.diff(edges)
    dens = p / w
    err = np.sqrt(p * (1.0 - p) / total) / w
    nempty = int(np.count_nonzero(counts == 0))
    if nempty:
        log.info("mode %d: %d empty histogram bins", k, nempty)
    return EstimatedPdf(edges, dens, err, counts, total)


def estimate_generating_function(stats: EnsembleStats, k: int, lam, guard: float = 30.0):
    """Sample mean of exp(lambda s) with delete-one jackknife errors."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    x = stats.s[:, k]
    if np.max(lam) * np.max(x) >= guard:
        raise OverflowError(f"lambda * max s >= {guard}; exp would lose precision")
    E = np.exp(np.outer(lam, x))
    R = x.size
    total = np.sum(E, axis=1)
    Z = total / R
    loo = (total[:, None] - E) / (R - 1)
    var = (R - 1) / R * np.sum((loo - loo.mean(axis=1, keepdims=True)) ** 2, axis=1)
    return Z, np.sqrt(var)


# ---------------------------------------------------------------------------
# kinetic slope


@dataclass
class KineticSlope:
    epsilon: float
    t: np.ndarray
    dn: np.ndarray          # (times, M) mean change of |b|^2
    dn_err: np.ndarray
    theory: np.ndarray      # (times, M): t (eta_t - gamma_t n)
    slope: np.ndarray       # per mode, linear fit over t
    slope_err: np.ndarray
    theory_slope: np.ndarray


@dataclass
class SlopeScan:
    runs: list = field(default_factory=list)

    def exponent(self, mode: int) -> float:
        eps = np.array([r.epsilon for r in self.runs])
        sl = np.array([abs(r.slope[mode]) for r in self.runs])
        return float(np.polyfit(np.log(eps), np.log(sl), 1)[0])


def _linear_slope(t, y, yerr=None):
    X = np.vstack([np.ones_like(t), t]).T
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    if yerr is None:
        return coef[1], 0.0
    # propagate per-sample errors through the least-squares weights (rows of the pseudoinverse)
    pinv = np.linalg.pinv(X)
    return coef[1], float(np.sqrt(np.sum((pinv[1] * yerr) ** 2)))


def measure_kinetic_slope(model: WaveModel, sampler: RpaSampler, eps_list, t_samples, R: int,
                          dt: float | None = None, antithetic: bool = True, scheme: str = "rk4",
                          pair_modes: bool = True) -> SlopeScan:
    """Early-time growth of <|b_k|^2> for each epsilon, against t (eta_t - gamma_t n).

    With ``antithetic`` each initial field is run at +eps and -eps and the
    two changes are averaged, which cancels the odd orders in eps exactly.
    ``pair_modes`` averages k and -k (statistically equivalent for
    symmetric spectra).  Errors use realizations as independent samples.
    """
    t_samples = np.asarray(t_samples, dtype=float)
    if t_samples.size < 5:
        raise ValueError("fit window needs at least 5 samples")
    b0 = sample_ensemble(sampler, R)
    s0 = (b0 * np.conj(b0)).real
    neg = model.grid.negation
    scan = SlopeScan()
    for eps in eps_list:
        signs = (1.0, -1.0) if antithetic and eps != 0 else (1.0,)
        dsum = 0.0
        for sg in signs:
            # -eps is realized by flipping the coupling sign, which is the same flow
            m = model.with_epsilon(eps) if sg > 0 else WaveModel(
                model.grid, model.law, replace(model.coupling, w0=-model.coupling.w0), eps)
            step = dt if dt is not None else default_dt(m, b0, scheme)
            # every sample time must be on the step lattice
            ratio = t_samples / step
            nst = np.round(ratio).astype(int)
            if np.any(np.abs(nst - ratio) > 1e-6):
                raise ValueError("sample times must be multiples of dt")
            y = b0.copy()
            out = []
            t_prev = 0.0
            for t in t_samples:
                tr = integrate(m, y, t - t_prev, step, scheme, t0=t_prev)
                y = tr.b[-1]
                t_prev = t
                out.append((y * np.conj(y)).real - s0)
            dsum = dsum + np.array(out)
        d = dsum / len(signs)                 # (times, R, M)
        if pair_modes:
            d = 0.5 * (d + d[..., neg])
        mean = d.mean(axis=1)
        err = d.std(axis=1, ddof=1) / math.sqrt(R)
        n = sampler.n
        theory = np.empty_like(mean)
        for i, t in enumerate(t_samples):
            r = rates_discrete(model.with_epsilon(eps), n, T=t)
            theory[i] = t * (r.eta - r.gamma * n)
        slopes, serr, tslope = [], [], []
        for j in range(mean.shape[1]):
            a, e = _linear_slope(t_samples, mean[:, j], err[:, j])
            slopes.append(a)
            serr.append(e)
            tslope.append(_linear_slope(t_samples, theory[:, j])[0])
        scan.runs.append(KineticSlope(eps, t_samples, mean, err, theory, np.array(slopes), np.array(serr),
                                      np.array(tslope)))
    return scan


# ---------------------------------------------------------------------------
# secular drift of the first iterate


def first_iterate_drift(model: WaveModel, amplitudes, T: float, with_shift: bool = True,
                        phases: int = 8) -> np.ndarray:
    """Phase average of a1_l(T) conj(a0_l) over an equispaced phase lattice, per mode.

    ``a1 = -i sum W conj(a_a) a_m a_nu Delta(dw)`` with ``Delta(x) = (exp(i x T) - 1)/(i x)``,
    plus ``+i Omega_l a_l T`` when the frequency shift is applied.  The lattice
    average is exact for the cubic phase monomials involved when ``phases >= 4``.
    """
    A = np.asarray(amplitudes, dtype=float)
    M = A.size
    q = model.grid.quartets()
    w = model.omega
    f = model.fac
    Wq = model.coupling.prefactor * f[q[0]] * f[q[1]] * f[q[2]] * f[q[3]]
    x = w[q[0]] + w[q[1]] - w[q[2]] - w[q[3]]
    with np.errstate(invalid="ignore", divide="ignore"):
        Delta = np.where(np.abs(x) * T < 1e-12, T + 0j, (np.exp(1j * x * T) - 1.0) / (1j * np.where(x == 0, 1, x)))
    grid1 = np.exp(2j * math.pi * np.arange(phases) / phases)
    acc = np.zeros(M, dtype=complex)
    count = 0
    for combo in itertools.product(range(phases), repeat=M):
        a0 = A * grid1[list(combo)]
        terms = Wq * np.conj(a0[q[1]]) * a0[q[2]] * a0[q[3]] * Delta
        a1 = -1j * model.epsilon * np.bincount(q[0], terms.real, minlength=M) \
            + model.epsilon * np.bincount(q[0], terms.imag, minlength=M)
        if with_shift:
            a1 = a1 + 1j * frequency_shift(model, a0) * a0 * T
        acc += a1 * np.conj(a0)
        count += 1
    return acc / count


# ---------------------------------------------------------------------------
# binary state files

STATE_MAGIC = b"WTLS"
STATE_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


def write_states(path, b, grid) -> None:
    """Header ``<4s I I I Q``: magic, version, N, d, R; then R*M (re, im) float64 pairs, little-endian."""
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    R, M = b.shape
    if M != grid.size:
        raise ValueError("state size does not match the grid")
    body = np.empty((R, M, 2), dtype="<f8")
    body[..., 0] = b.real
    body[..., 1] = b.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(STATE_MAGIC, STATE_VERSION, grid.n, grid.d, R))
        fh.write(body.tobytes())


def read_states(path):
    """Return (states (R, M), N, d)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, N, d, R = _HEADER.unpack(head)
        if magic != STATE_MAGIC:
            raise ValueError("not a state file")
        if version != STATE_VERSION:
            raise ValueError(f"unsupported state file version {version}")
        body = np.frombuffer(fh.read(), dtype="<f8")
    M = N ** d
    if body.size != R * M * 2:
        raise ValueError("state file body has the wrong size")
    body = body.reshape(R, M, 2)
    return body[..., 0] + 1j * body[..., 1], N, d
