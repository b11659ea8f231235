"""Dispersion laws, interaction coefficients, spectral grids and scaling formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class UndefinedCutoffError(ValueError):
    """Raised when the breaking amplitude is requested at |k| = 0."""


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class SpectralGrid:
    """Integer lattice of wavevectors ``k = (2 pi / L) m`` in ``d`` dimensions.

    ``n`` modes per dimension.  Odd ``n`` gives ``m in {-(n-1)/2, ..., (n-1)/2}``;
    even ``n`` gives ``m in {+-1, ..., +-n/2}`` (the zero mode is dropped so the
    lattice stays closed under negation).
    """

    d: int = 1
    n: int = 8
    length: float = 2.0 * math.pi

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.d}")
        if self.n < 2:
            raise ValueError(f"need at least 2 modes per dimension, got {self.n}")
        if not self.length > 0:
            raise ValueError("box length must be positive")

    @property
    def dk(self) -> float:
        return 2.0 * math.pi / self.length

    @property
    def volume(self) -> float:
        return self.length ** self.d

    @property
    def half_width(self) -> int:
        return self.n // 2

    @cached_property
    def axis(self) -> np.ndarray:
        h = self.half_width
        if self.n % 2:
            return np.arange(-h, h + 1)
        return np.concatenate([np.arange(-h, 0), np.arange(1, h + 1)])

    @cached_property
    def ints(self) -> np.ndarray:
        """Integer lattice coordinates, shape (M, d), lexicographic order."""
        if self.d == 1:
            return self.axis[:, None].astype(np.int64)
        mx, my = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([mx.ravel(), my.ravel()], axis=1).astype(np.int64)

    @property
    def size(self) -> int:
        return self.ints.shape[0]

    @cached_property
    def k(self) -> np.ndarray:
        return self.ints * self.dk

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(np.sum(self.k ** 2, axis=1))

    @cached_property
    def box_half_width(self) -> float:
        """Half-width of the k-space box covered by the lattice cells."""
        return (self.half_width + 0.5) * self.dk

    def index_of(self, m) -> int:
        """Mode index of integer coordinates ``m`` (scalar in 1D)."""
        m = np.atleast_1d(np.asarray(m, dtype=np.int64))
        hits = np.nonzero(np.all(self.ints == m, axis=1))[0]
        if hits.size == 0:
            raise KeyError(f"{m.tolist()} is not on the grid")
        return int(hits[0])

    @cached_property
    def negation(self) -> np.ndarray:
        """``negation[i]`` is the index of ``-k_i``."""
        lut = self._lookup
        return lut[self._flat(-self.ints)]

    # sum lattice: every m + nu with m, nu on the grid
    @property
    def _sum_half(self) -> int:
        return 2 * self.half_width

    def _flat(self, ints: np.ndarray, half: int | None = None) -> np.ndarray:
        half = self.half_width if half is None else half
        span = 2 * half + 1
        shifted = ints + half
        if self.d == 1:
            return shifted[..., 0]
        return shifted[..., 0] * span + shifted[..., 1]

    @cached_property
    def _lookup(self) -> np.ndarray:
        span = 2 * self.half_width + 1
        lut = -np.ones(span ** self.d, dtype=np.int64)
        lut[self._flat(self.ints)] = np.arange(self.size)
        return lut

    @cached_property
    def pair_index(self) -> np.ndarray:
        """``pair_index[i, j]``: flat sum-lattice index of ``m_i + m_j``, shape (M, M)."""
        sums = self.ints[:, None, :] + self.ints[None, :, :]
        return np.ascontiguousarray(self._flat(sums, self._sum_half), dtype=np.int64)

    @property
    def n_sum(self) -> int:
        return (2 * self._sum_half + 1) ** self.d

    @cached_property
    def pair_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Pairs ``(m, nu)`` grouped by sum-lattice index; lexicographic within a group."""
        flat = self.pair_index.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.n_sum)
        ptr = np.zeros(self.n_sum + 1, dtype=np.int64)
        np.cumsum(counts, out=ptr[1:])
        M = self.size
        pm = (order // M).astype(np.int64)
        pn = (order % M).astype(np.int64)
        return ptr, pm, pn

    def quartets(self) -> tuple[np.ndarray, ...]:
        """All ``(l, a, m, nu)`` with ``k_l + k_a = k_m + k_nu``, lexicographic in (l, a, m)."""
        ptr, pm, pn = self.pair_csr
        out_l, out_a, out_m, out_n = [], [], [], []
        M = self.size
        for l in range(M):
            for a in range(M):
                q = self.pair_index[l, a]
                sl = slice(ptr[q], ptr[q + 1])
                cnt = ptr[q + 1] - ptr[q]
                out_l.append(np.full(cnt, l))
                out_a.append(np.full(cnt, a))
                out_m.append(pm[sl])
                out_n.append(pn[sl])
        return tuple(np.concatenate(x).astype(np.int64) for x in (out_l, out_a, out_m, out_n))

    def quartet_count(self) -> int:
        ptr = self.pair_csr[0]
        counts = np.diff(ptr)
        return int(np.sum(counts[self.pair_index]))


# ---------------------------------------------------------------------------
# dispersion and interaction


def wavevector_norm(k) -> np.ndarray | float:
    """|k| for a scalar (1D wavevector) or an array with components on the last axis."""
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        return float(abs(k))
    out = np.sqrt(np.sum(k * k, axis=-1))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DispersionLaw:
    """``omega = c |k|**alpha``; the deep-water law is ``c = sqrt(g)``, ``alpha = 1/2``."""

    kind: str = "power_law"
    c: float = 1.0
    alpha: float = 2.0
    g: float | None = None

    def __post_init__(self):
        if self.kind == "deep_water_gravity":
            if self.g is None or not self.g > 0:
                raise ValueError(f"gravity must be positive, got {self.g}")
            object.__setattr__(self, "c", math.sqrt(self.g))
            object.__setattr__(self, "alpha", 0.5)
        elif self.kind == "power_law":
            if not self.c > 0:
                raise ValueError(f"dispersion prefactor must be positive, got {self.c}")
            if not self.alpha > 0:
                raise ValueError(f"dispersion exponent must be positive, got {self.alpha}")
        else:
            raise ValueError(f"unknown dispersion kind {self.kind!r}")

    def frequency(self, kmag):
        return self.c * np.power(np.abs(kmag), self.alpha)

    def group_speed(self, kmag):
        """d omega / d|k|."""
        kmag = np.abs(np.asarray(kmag, dtype=float))
        with np.errstate(divide="ignore"):
            return self.c * self.alpha * np.power(kmag, self.alpha - 1.0)


def power_law(c: float = 1.0, alpha: float = 2.0) -> DispersionLaw:
    return DispersionLaw("power_law", c=c, alpha=alpha)


def deep_water(g: float = 9.81) -> DispersionLaw:
    return DispersionLaw("deep_water_gravity", g=g)


def dispersion(law: DispersionLaw, k):
    """omega(k); ``k`` is a scalar or has its components on the last axis."""
    out = law.frequency(wavevector_norm(k))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class InteractionModel:
    """Real couplings ``W = prefactor * (|k||k1||k2||k3|)**(beta/4)`` (``beta = 0``: constant)."""

    kind: str = "constant"
    w0: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "product_power"):
            raise ValueError(f"unknown interaction kind {self.kind!r}")
        if self.kind == "constant" and self.beta != 0.0:
            object.__setattr__(self, "beta", 0.0)

    @property
    def prefactor(self) -> float:
        return self.w0

    def mode_factor(self, kmag) -> np.ndarray:
        """Per-mode factor ``f`` with ``W = prefactor * f f1 f2 f3``."""
        kmag = np.asarray(kmag, dtype=float)
        if self.kind == "constant":
            return np.ones_like(kmag)
        if self.beta < 0 and np.any(kmag == 0):
            raise ValueError("product-power coupling with beta < 0 diverges at |k| = 0")
        return np.power(kmag, self.beta / 4.0)

    def __call__(self, k, k1, k2, k3):
        f = [self.mode_factor(wavevector_norm(x)) for x in (k, k1, k2, k3)]
        # grouping as (f f1)(f2 f3) keeps all three symmetries bit-exact
        out = self.prefactor * ((f[0] * f[1]) * (f[2] * f[3]))
        return float(out) if np.ndim(out) == 0 else out


def constant_coupling(w0: float = 1.0) -> InteractionModel:
    return InteractionModel("constant", w0=w0)


def product_power(prefactor: float = 1.0, beta: float = 0.0) -> InteractionModel:
    return InteractionModel("product_power", w0=prefactor, beta=beta)


def interaction(model: InteractionModel, k, k1, k2, k3):
    return model(k, k1, k2, k3)


# ---------------------------------------------------------------------------
# the full model


@dataclass(frozen=True)
class WaveModel:
    grid: SpectralGrid = field(default_factory=SpectralGrid)
    law: DispersionLaw = field(default_factory=power_law)
    coupling: InteractionModel = field(default_factory=InteractionModel)
    epsilon: float = 0.1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("nonlinearity epsilon must be non-negative")

    @cached_property
    def omega(self) -> np.ndarray:
        return self.law.frequency(self.grid.kmag)

    @cached_property
    def fac(self) -> np.ndarray:
        return self.coupling.mode_factor(self.grid.kmag)

    @property
    def mean_frequency(self) -> float:
        w = self.omega[self.omega > 0]
        return float(np.mean(w))

    def with_epsilon(self, eps: float) -> "WaveModel":
        return WaveModel(self.grid, self.law, self.coupling, eps)

    def W(self, l, a, m, nu):
        """Coupling for grid indices."""
        f = self.fac
        return self.coupling.prefactor * ((f[l] * f[a]) * (f[m] * f[nu]))


# ---------------------------------------------------------------------------
# breaking amplitude and gravity-wave scalings


@dataclass(frozen=True)
class CutoffModel:
    epsilon: float
    w_ref: float = 1.0
    law: DispersionLaw = field(default_factory=power_law)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive for a finite breaking amplitude")
        if self.w_ref == 0:
            raise ValueError("reference coupling must be non-zero")


def critical_amplitude(cut: CutoffModel, k, omega: float | None = None) -> float:
    """Breaking intensity ``s_nl = omega / (eps W |k|^2)``.

    A heuristic estimate; it is returned in whatever units the inputs carry.
    """
    kmag = float(wavevector_norm(k))
    if kmag == 0.0:
        raise UndefinedCutoffError("breaking amplitude is undefined at |k| = 0")
    w = float(cut.law.frequency(kmag)) if omega is None else float(omega)
    return w / (cut.epsilon * abs(cut.w_ref) * kmag * kmag)


@dataclass(frozen=True)
class CascadeScaling:
    g: float = 9.81
    energy_flux: float = 1.0
    action_flux: float = 1.0
    direction: str = "direct"

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError("gravity must be positive")
        if self.energy_flux < 0 or self.action_flux < 0:
            raise ValueError("fluxes must be non-negative")
        if self.direction not in ("direct", "inverse"):
            raise ValueError(f"cascade direction must be 'direct' or 'inverse', got {self.direction!r}")


def breakdown_wavenumber(sc: CascadeScaling) -> float:
    """g^3/P^2 (direct cascade) or g/Q (inverse); ``inf`` for zero flux."""
    if sc.direction == "direct":
        return math.inf if sc.energy_flux == 0 else sc.g ** 3 / sc.energy_flux ** 2
    return math.inf if sc.action_flux == 0 else sc.g / sc.action_flux


def tail_area_parameter(sc: CascadeScaling, k):
    k = np.asarray(k, dtype=float)
    if np.any(k <= 0):
        raise ValueError("wavenumber must be positive")
    if sc.direction == "direct":
        out = sc.energy_flux ** (2.0 / 3.0) * np.cbrt(k) / sc.g
    else:
        out = sc.action_flux * k / sc.g
    return float(out) if out.ndim == 0 else out
