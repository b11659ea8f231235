import json

import numpy as np
import pytest

from wtlab import io
from wtlab.ensemble import EnsembleStats, RpaSampler, estimate_pdf, sample_ensemble
from wtlab.report import Binned, DisjointSupportError, compare, compare_report, fit_tail


def _write(path, header, cols):
    io.write_csv(path, header, list(zip(*cols)))
    return path


def test_identical_inputs_have_zero_distance(tmp_path):
    s = np.linspace(0.05, 10, 200)
    d = np.exp(-s)
    a = _write(tmp_path / "a.csv", ["s", "density"], [s, d])
    rep = compare_report(a, a)
    assert rep.sup == pytest.approx(0.0, abs=1e-15)
    assert rep.l1 == pytest.approx(0.0, abs=1e-15)


def test_synthetic_tail_exponent(tmp_path):
    s = np.geomspace(0.01, 200, 400)
    theory = np.exp(-s)
    tail = np.exp(-s) + 0.002 / s
    t = _write(tmp_path / "t.csv", ["s", "density"], [s, theory])
    e = _write(tmp_path / "e.csv", ["s", "density"], [s, tail])
    rep = compare_report(t, e, tmp_path / "cmp", tail=(20.0, 150.0))
    te = rep.tail_empirical
    assert te.slope == pytest.approx(-1.0, abs=0.1)
    assert te.ci_lo <= te.slope <= te.ci_hi
    assert rep.tail_theory.slope < -10
    summary = json.loads((tmp_path / "cmp.json").read_text())
    assert summary["tail_empirical"]["slope"] == pytest.approx(te.slope)
    lines = (tmp_path / "cmp.dat").read_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == 401


def test_noisy_tail_fit_interval():
    rng = np.random.default_rng(0)
    s = np.geomspace(10, 100, 30)
    p = 0.01 / s * np.exp(rng.normal(0, 0.05, s.size))
    fit = fit_tail(s, p, 10, 100, stderr=0.05 * p)
    assert fit.ci_lo <= -1.0 <= fit.ci_hi
    assert fit.points == 30


def test_rayleigh_ensemble_against_analytic(tmp_path):
    n = 1.0
    b = sample_ensemble(RpaSampler(np.full(1, n), seed=5), 50_000)
    edges = np.linspace(0, 8, 81)
    est = estimate_pdf(EnsembleStats.from_states(b), 0, edges)
    emp = _write(tmp_path / "emp.csv", ["s_lo", "s_hi", "density", "stderr", "count", "total"],
                 [edges[:-1], edges[1:], est.density, est.stderr, est.counts, np.full(80, est.total)])
    fine = np.linspace(0, 8, 2001)
    th = _write(tmp_path / "th.csv", ["s", "density"], [fine, np.exp(-fine / n) / n])
    rep = compare_report(th, emp)
    assert rep.z_within3 >= 0.99
    assert rep.bins == 80


def test_disjoint_supports():
    a = Binned(np.array([0.0, 1.0]), np.array([1.0, 2.0]), np.ones(2))
    b = Binned(np.array([5.0, 6.0]), np.array([6.0, 7.0]), np.ones(2), stderr=np.ones(2))
    with pytest.raises(DisjointSupportError):
        compare(a, b)
