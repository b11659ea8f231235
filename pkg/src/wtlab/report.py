"""Theory-vs-empirical PDF comparison: z-scores, distances, tail fits, plot data."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import io


class DisjointSupportError(ValueError):
    pass


@dataclass
class Binned:
    """Density on bins [lo, hi) with optional standard errors and raw counts."""

    lo: np.ndarray
    hi: np.ndarray
    density: np.ndarray
    stderr: np.ndarray | None = None
    count: np.ndarray | None = None
    total: int | None = None
    points: np.ndarray | None = None  # sample locations for point-sampled tables

    @property
    def centers(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def nodes(self):
        """Where the density values live: sample points, else bin centres."""
        return self.points if self.points is not None else self.centers

    @property
    def widths(self):
        return self.hi - self.lo


def binned_from_table(cols: dict) -> Binned:
    points = None
    if "s_lo" in cols:
        lo, hi = np.asarray(cols["s_lo"]), np.asarray(cols["s_hi"])
    elif "s" in cols:
        s = np.asarray(cols["s"])
        # point samples become bins whose faces sit halfway between neighbours
        mid = 0.5 * (s[1:] + s[:-1])
        lo = np.concatenate([[max(0.0, s[0] - (mid[0] - s[0]))], mid])
        hi = np.concatenate([mid, [s[-1] + (s[-1] - mid[-1])]])
        points = s
    else:
        raise ValueError("table needs s or s_lo/s_hi columns")
    key = "density" if "density" in cols else "P"
    count = np.asarray(cols["count"]) if "count" in cols else None
    total = int(cols["total"][0]) if "total" in cols else None
    err = np.asarray(cols["stderr"]) if "stderr" in cols else None
    return Binned(lo, hi, np.asarray(cols[key]), err, count, total, points)


def bin_probabilities(theory: Binned, lo, hi, sub: int = 16) -> np.ndarray:
    """Mass of the theory density in each target bin (piecewise-linear interpolation in s)."""
    x = theory.nodes
    out = np.empty(len(lo))
    for i, (a, b) in enumerate(zip(lo, hi)):
        t = np.linspace(a, b, sub + 1)
        y = np.interp(t, x, theory.density, left=0.0, right=0.0)
        out[i] = np.trapezoid(y, t) if hasattr(np, "trapezoid") else np.trapz(y, t)
    return out


def z_scores(emp: Binned, p_theory: np.ndarray) -> np.ndarray:
    """Per-bin z.  With counts the binomial error uses the theory probability, else the empirical stderr.

    Without either, every entry is NaN (no z-scores available).
    """
    if emp.count is not None and emp.total:
        N = emp.total
        var = N * p_theory * (1.0 - p_theory)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (emp.count - N * p_theory) / np.sqrt(var)
        return np.where(var > 0, z, np.where(emp.count == 0, 0.0, np.inf))
    if emp.stderr is None:
        return np.full(emp.lo.size, np.nan)
    d = emp.density - p_theory / emp.widths
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(emp.stderr > 0, d / emp.stderr, np.nan)


@dataclass
class TailFit:
    slope: float
    stderr: float
    lo: float
    hi: float
    ci_lo: float
    ci_hi: float
    points: int


def fit_tail(s, density, s_lo: float, s_hi: float, stderr=None, level: float = 0.95) -> TailFit:
    """Weighted least squares of log P on log s over the window; weights from relative errors."""
    s = np.asarray(s, dtype=float)
    p = np.asarray(density, dtype=float)
    sel = (s >= s_lo) & (s <= s_hi) & (p > 0)
    if np.count_nonzero(sel) < 3:
        raise ValueError("fewer than 3 positive points in the tail window")
    x, y = np.log(s[sel]), np.log(p[sel])
    if stderr is not None:
        rel = np.asarray(stderr, dtype=float)[sel] / p[sel]
        w = np.where(rel > 0, 1.0 / rel ** 2, 0.0)
        if not np.any(w > 0):
            w = np.ones_like(x)
    else:
        w = np.ones_like(x)
    X = np.vstack([np.ones_like(x), x]).T
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = (y - X @ coef) * sw
    dof = max(1, x.size - 2)
    cov = np.linalg.inv((X * w[:, None]).T @ X) * (resid @ resid / dof)
    se = float(math.sqrt(max(cov[1, 1], 0.0)))
    q = stats.t.ppf(0.5 + 0.5 * level, dof)
    b = float(coef[1])
    return TailFit(b, se, s_lo, s_hi, b - q * se, b + q * se, int(x.size))


@dataclass
class Report:
    bins: int
    sup: float
    l1: float
    z_max: float | None
    z_within3: float | None
    flagged: int
    tail_theory: TailFit | None
    tail_empirical: TailFit | None

    def to_dict(self):
        return asdict(self)


def compare(theory: Binned, emp: Binned, tail: tuple[float, float] | None = None):
    """Return (Report, per-bin rows).  Distances use the density on the empirical bins."""
    t_lo, t_hi = theory.lo[0], theory.hi[-1]
    inside = (emp.hi > t_lo) & (emp.lo < t_hi)
    if not np.any(inside):
        raise DisjointSupportError("theory and empirical grids do not overlap")
    if emp.points is not None:
        # point-sampled empirical table: compare pointwise
        d_th = np.interp(emp.points, theory.nodes, theory.density, left=0.0, right=0.0)
        p_th = d_th * emp.widths
    else:
        p_th = bin_probabilities(theory, emp.lo, emp.hi)
        d_th = p_th / emp.widths
    z = z_scores(emp, p_th)
    diff = np.abs(emp.density - d_th)
    finite = np.isfinite(z)
    # bins whose z is infinite (events where the theory has no mass) or which are empty
    flagged = int(np.count_nonzero(np.isinf(z)))
    if emp.count is not None:
        flagged += int(np.count_nonzero(emp.count == 0))
    tt = te = None
    if tail is not None:
        tt = fit_tail(theory.nodes, theory.density, *tail, stderr=theory.stderr)
        te = fit_tail(emp.nodes, emp.density, *tail, stderr=emp.stderr)
    zf = np.abs(z[finite])
    rep = Report(
        bins=int(emp.lo.size),
        sup=float(np.max(diff)),
        l1=float(np.sum(diff * emp.widths)),
        z_max=float(np.max(zf)) if zf.size else None,
        z_within3=float(np.mean(zf <= 3.0)) if zf.size else None,
        flagged=flagged,
        tail_theory=tt,
        tail_empirical=te,
    )
    rows = np.column_stack([emp.nodes, emp.density, d_th, np.where(finite, z, np.nan)])
    return rep, rows


def compare_report(theory_csv, empirical_csv, out_prefix=None, tail=None) -> Report:
    """Compare two CSV tables; optionally write ``<prefix>.json`` and ``<prefix>.dat``."""
    theory = binned_from_table(io.read_csv(theory_csv))
    emp = binned_from_table(io.read_csv(empirical_csv))
    rep, rows = compare(theory, emp, tail)
    if out_prefix is not None:
        io.atomic_write_text(f"{out_prefix}.json", json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
        io.write_dat(f"{out_prefix}.dat", ["s", "empirical", "theory", "z"], rows)
    return rep
