import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from wtlab import ensemble as ens
from wtlab.collision import rates_discrete
from wtlab.ensemble import (BreakingCap, Damping, EnsembleStats, Forcing, GridTooLargeError, RpaSampler,
                            apply_breaking_cap, estimate_generating_function, estimate_pdf, first_iterate_drift,
                            frequency_shift, hamiltonian, integrate, measure_kinetic_slope, naive_rhs,
                            probability_excess, read_states, rhs_dynamical, sample_ensemble, sample_rpa_field,
                            total_action, write_states)
from wtlab.kinetic import generating_operator
from wtlab.pdf import rayleigh_pdf
from wtlab.wave_model import InteractionModel, SpectralGrid, WaveModel, power_law, product_power


def _model(n=8, eps=0.1, alpha=0.5, coupling=None, d=1):
    return WaveModel(SpectralGrid(d, n), power_law(1.0, alpha), coupling or InteractionModel(), eps)


def _random_state(M, R=None, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    shape = (M,) if R is None else (R, M)
    return scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))


# sampling

def test_deterministic_sampler():
    s = RpaSampler(np.ones(8), "deterministic", seed=4)
    st_ = sample_rpa_field(s, SpectralGrid(1, 8))
    assert np.allclose(st_.amplitude, 1.0, rtol=0, atol=1e-15)
    assert np.allclose(np.abs(st_.phase_factor), 1.0)


def test_rayleigh_sampler_mean_and_circular_symmetry():
    n = np.array([0.5, 2.0])
    b = sample_ensemble(RpaSampler(n, seed=1), 100_000)
    s = (b * np.conj(b)).real
    se = s.std(axis=0) / math.sqrt(s.shape[0])
    assert np.all(np.abs(s.mean(axis=0) - n) <= 3 * se)
    for k in range(2):
        for part in (b[:, k].real, b[:, k].imag):
            assert abs(part.mean()) <= 3 * part.std() / math.sqrt(part.size)


def test_phase_uniformity_and_independence():
    R = 100_000
    b = sample_ensemble(RpaSampler(np.ones(2), seed=2), R)
    phase = np.mod(np.angle(b[:, 0]), 2 * math.pi) / (2 * math.pi)
    assert sps.kstest(phase, "uniform").pvalue > 0.01
    amp = np.abs(b[:, 0])
    assert abs(np.corrcoef(amp, phase)[0, 1]) < 3 / math.sqrt(R)
    assert abs(np.corrcoef(phase, np.mod(np.angle(b[:, 1]), 2 * math.pi))[0, 1]) < 3 / math.sqrt(R)


def test_truncated_sampler_bounded():
    b = sample_ensemble(RpaSampler(np.ones(4), "truncated", seed=3, s_max=2.0), 5000)
    assert np.max(np.abs(b) ** 2) <= 2.0 + 1e-12


def test_sampler_deterministic_given_seed():
    s = RpaSampler(np.linspace(0.1, 1, 6), seed=99)
    assert np.array_equal(sample_ensemble(s, 10), sample_ensemble(s, 10))
    assert np.array_equal(sample_ensemble(s, 10)[5:], sample_ensemble(s, 5, start=5))
    assert not np.array_equal(sample_ensemble(s, 3), sample_ensemble(RpaSampler(s.n, seed=100), 3))


# frequency shift

def test_frequency_shift_single_mode():
    m = _model(eps=0.3)
    b = np.zeros(8, dtype=complex)
    b[2] = 1.5
    assert np.allclose(frequency_shift(m, b), 2 * 0.3 * 1.5 ** 2)


def test_frequency_shift_uniform_state():
    m = WaveModel(SpectralGrid(1, 5), power_law(), InteractionModel(), 0.3)
    b = np.full(5, math.sqrt(0.5))
    assert np.allclose(frequency_shift(m, b), 0.3 * 5)


def test_shift_reduces_secular_drift():
    m = WaveModel(SpectralGrid(1, 2), power_law(1.0, 2.0), InteractionModel(), 0.1)
    d1 = first_iterate_drift(m, [1.0, 1.0], 1.0, with_shift=False)
    d2 = first_iterate_drift(m, [1.0, 1.0], 2.0, with_shift=False)
    # linear growth in T without the shift
    assert np.allclose(d2, 2 * d1, rtol=1e-12)
    assert np.all(np.abs(d1) > 0.2)
    s1 = first_iterate_drift(m, [1.0, 1.0], 1.0, with_shift=True)
    assert np.all(np.abs(s1) < np.abs(d1) / 2)


# right-hand side

def test_rhs_zero_for_free_field():
    m = _model(eps=0.0)
    assert np.all(rhs_dynamical(m, _random_state(8), 1.3) == 0)


@pytest.mark.parametrize("coupling", [InteractionModel(), product_power(0.7, 2.0)])
@pytest.mark.parametrize("d,n", [(1, 8), (2, 4)])
def test_rhs_matches_naive_loop(coupling, d, n):
    m = _model(n, 0.2, 0.5, coupling, d)
    b = _random_state(m.grid.size, seed=5)
    for t in (0.0, 0.7):
        got = rhs_dynamical(m, b, t)
        ref = naive_rhs(m, b, t)
        assert np.max(np.abs(got - ref)) <= 1e-14 * max(1.0, np.max(np.abs(ref)))


def test_rhs_batch_matches_single():
    m = _model()
    b = _random_state(8, R=3, seed=6)
    batch = rhs_dynamical(m, b, 0.4)
    for i in range(3):
        assert np.allclose(batch[i], rhs_dynamical(m, b[i], 0.4), rtol=0, atol=1e-15)


def test_quartet_guard(monkeypatch):
    monkeypatch.setattr(ens, "QUARTET_GUARD", 10)
    with pytest.raises(GridTooLargeError):
        rhs_dynamical(_model(), _random_state(8))


# integration

def test_free_field_constant_in_interaction_representation():
    m = _model(eps=0.0)
    b0 = _random_state(8, R=2)
    tr = integrate(m, b0, 5.0, 0.01, record_every=100)
    assert np.all(tr.b == b0)
    assert tr.t[-1] == 5.0 and tr.t.size == 6


def test_integrable_case_phase_shifts():
    m = WaveModel(SpectralGrid(1, 8), power_law(1.0, 2.0), InteractionModel(), 0.1)
    b0 = _random_state(8, R=2, seed=7)
    T = 20.0
    tr = integrate(m, b0, T, 0.01, resonant_only=True, record_every=500)
    assert np.max(np.abs(np.abs(tr.b) - np.abs(b0))) <= 1e-10
    S = np.sum(np.abs(b0) ** 2, axis=1, keepdims=True)
    exact = b0 * np.exp(-1j * 0.1 * (2 * S - np.abs(b0) ** 2) * T)
    assert np.max(np.abs(tr.b[-1] - exact)) <= 1e-8


@pytest.mark.parametrize("scheme", ["rk4", "ifrk4"])
def test_conservation_and_alarms(scheme):
    m = _model(16, 0.05)
    b0 = sample_ensemble(RpaSampler(1.0 / (1.0 + m.grid.kmag ** 2), seed=8), 2)
    dt = ens.default_dt(m, b0, scheme)
    steps = round(50.0 / dt)
    tr = integrate(m, b0, steps * dt, dt, scheme=scheme, record_every=steps // 4)
    assert tr.action_drift <= 1e-8
    assert tr.energy_drift <= 1e-8
    assert tr.alarms == 0


def test_schemes_agree():
    m = _model(8, 0.1)
    b0 = _random_state(8, R=2, seed=9)
    a = integrate(m, b0, 5.0, 0.005, "rk4")
    b = integrate(m, b0, 5.0, 0.005, "ifrk4")
    assert np.max(np.abs(a.b[-1] - b.b[-1])) <= 1e-6


@pytest.mark.parametrize("scheme", ["rk4", "ifrk4"])
def test_fourth_order_convergence(scheme):
    m = _model(8, 0.2)
    b0 = _random_state(8, R=1, seed=10)
    ref = integrate(m, b0, 4.0, 0.0025, scheme).b[-1]
    e1 = np.max(np.abs(integrate(m, b0, 4.0, 0.04, scheme).b[-1] - ref))
    e2 = np.max(np.abs(integrate(m, b0, 4.0, 0.02, scheme).b[-1] - ref))
    assert e1 / e2 == pytest.approx(16.0, abs=2.0)


def test_integrate_guard():
    m = _model(8, 0.5)
    with pytest.raises(ValueError):
        integrate(m, _random_state(8, R=1, scale=5.0), 1.0, 0.5)


def test_forced_runs_are_deterministic():
    m = _model(8, 0.1)
    b0 = np.full((3, 8), 1e-3, dtype=complex)
    kw = dict(forcing=Forcing(0.5, 2.5, 0.05), damping=Damping(3.5, 1.0), cap=BreakingCap(2.0, "redistribute"),
              seed=11, alarm=math.inf)
    a = integrate(m, b0, 10.0, 0.01, "ifrk4", **kw)
    b = integrate(m, b0, 10.0, 0.01, "ifrk4", **kw)
    assert np.array_equal(a.b, b.b)
    assert np.max(np.abs(a.b[-1]) ** 2) <= 2.0 + 1e-12
    # realizations depend only on their own index
    c = integrate(m, b0[1:], 10.0, 0.01, "ifrk4", start=1, **kw)
    assert np.array_equal(c.b[-1], a.b[-1][1:])


# cap

def test_cap_identity_below_level():
    b = _random_state(8, scale=0.1)
    out, mask = apply_breaking_cap(b, 10.0)
    assert np.array_equal(out, b) and not mask.any()


def test_cap_clip_preserves_phase():
    b = np.array([2.0 * np.exp(0.3j), 0.1])
    out, mask = apply_breaking_cap(b, 1.0)
    assert abs(out[0]) ** 2 == pytest.approx(1.0, rel=1e-15)
    assert np.angle(out[0]) == pytest.approx(0.3, rel=1e-14)
    assert mask.tolist() == [True, False]


def test_cap_redistribute():
    b = np.array([3.0 + 0j, 0.1])
    out, _ = apply_breaking_cap(b, 1.0, "redistribute", np.random.default_rng(0))
    assert abs(out[0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        apply_breaking_cap(b, 1.0, "redistribute")


@given(st.lists(st.complex_numbers(max_magnitude=100, allow_nan=False, allow_infinity=False), min_size=1,
                max_size=20), st.floats(0.01, 50))
def test_cap_bounds_everything(vals, level):
    out, _ = apply_breaking_cap(np.array(vals), level)
    assert np.all(np.abs(out) ** 2 <= level * (1 + 1e-12))


# estimators

def test_estimated_pdf_matches_rayleigh():
    n = 1.3
    b = sample_ensemble(RpaSampler(np.full(2, n), seed=12), 20_000)
    est = estimate_pdf(EnsembleStats.from_states(b), 0, np.linspace(0, 5 * n, 26))
    P = np.array([(math.exp(-a / n) - math.exp(-c / n)) for a, c in zip(est.edges[:-1], est.edges[1:])])
    z = (est.counts - est.total * P) / np.sqrt(est.total * P * (1 - P))
    assert np.all(np.abs(z) <= 3.5)
    assert np.mean(np.abs(z) <= 3) >= 0.95


def test_estimated_pdf_deterministic_spike_and_flags():
    b = sample_ensemble(RpaSampler(np.full(2, 2.0), "deterministic", seed=13), 200)
    est = estimate_pdf(EnsembleStats.from_states(b), 1, np.linspace(0.25, 4.25, 9))
    assert np.count_nonzero(est.counts) == 1
    assert est.counts[3] == 200
    assert est.empty.sum() == 7
    with pytest.raises(ValueError):
        estimate_pdf(EnsembleStats.from_states(b[:50]), 0, np.linspace(0.25, 4.25, 9))


def test_stats_standard_errors_shrink():
    s = RpaSampler(np.ones(1), seed=14)
    e1 = EnsembleStats.from_states(sample_ensemble(s, 400)).moments(0, 1)[1][1]
    e2 = EnsembleStats.from_states(sample_ensemble(s, 1600)).moments(0, 1)[1][1]
    assert e2 / e1 == pytest.approx(0.5, abs=0.1)


def test_generating_function_estimates():
    n = 1.0
    st_ = EnsembleStats.from_states(sample_ensemble(RpaSampler(np.full(1, n), seed=15), 50_000))
    x = st_.s[:, 0]
    lam = np.array([0.0])
    Z, err = estimate_generating_function(st_, 0, lam, guard=1e9)
    assert Z[0] == 1.0 and err[0] == 0.0
    # lambda n = 0.5 has finite variance only marginally; use the sample with a lower cut on lambda * max s
    lam = np.array([0.25 / n])
    Z, err = estimate_generating_function(st_, 0, lam, guard=1e9)
    assert Z[0] == pytest.approx(1 / (1 - 0.25), abs=4 * err[0])
    with pytest.raises(OverflowError):
        estimate_generating_function(st_, 0, [0.5], guard=1.0)
    # finite-difference derivatives at 0 against direct moments
    h = 1e-3
    Zp, _ = estimate_generating_function(st_, 0, [-h, 0.0, h], guard=1e9)
    m1 = (Zp[2] - Zp[0]) / (2 * h)
    m2 = (Zp[2] - 2 * Zp[1] + Zp[0]) / h ** 2
    assert m1 == pytest.approx(np.mean(x), rel=1e-5)
    assert m2 == pytest.approx(np.mean(x ** 2), rel=1e-4)


def test_generating_function_half():
    # lambda n = 0.5 -> 2; the estimator variance is infinite at exactly 1/2, so use many samples
    n = 1.0
    st_ = EnsembleStats.from_states(sample_ensemble(RpaSampler(np.full(1, n), seed=16), 200_000))
    Z, err = estimate_generating_function(st_, 0, [0.5], guard=1e9)
    assert Z[0] == pytest.approx(2.0, rel=0.05)


def test_ensemble_z_residual_within_errors():
    m = _model(8, 0.02)
    n = 1.0 / (1.0 + m.grid.kmag ** 2)
    R = 2000
    b0 = sample_ensemble(RpaSampler(n, seed=17), R)
    T = 50.0
    tr = integrate(m, b0, T, 0.1, "ifrk4")
    k = 0
    s0 = (b0[:, k] * np.conj(b0[:, k])).real
    s1 = (tr.b[-1][:, k] * np.conj(tr.b[-1][:, k])).real
    r = rates_discrete(m, n, T=T, modes=[k])
    eta, gam = float(r.eta[0]), float(r.gamma[0])
    lam = np.linspace(-0.5, 0.3, 9)

    def residual(a, b):
        Z0 = np.exp(np.outer(lam, a)).mean(axis=1)
        Z1 = np.exp(np.outer(lam, b)).mean(axis=1)
        Zm = 0.5 * (Z0 + Z1)
        Zl = np.gradient(Zm, lam, edge_order=2)
        return (Z1 - Z0) / T - generating_operator(lam, Zm, Zl, eta, gam)

    res = residual(s0, s1)
    loo = np.array([residual(np.delete(s0, i), np.delete(s1, i)) for i in range(0, R, 4)])
    err = np.sqrt((loo.shape[0] - 1) * np.var(loo, axis=0)) * 2.0
    assert np.all(np.abs(res) <= 4 * err + 1e-12)


def test_probability_excess_on_rayleigh():
    s = np.random.default_rng(18).exponential(1.0, (40, 5000))
    ex = probability_excess(s, 3.0, 0.5, n=1.0)
    assert ex.lo <= 1.0 <= ex.hi
    assert ex.ratio == pytest.approx(1.0, abs=0.1)


def test_kinetic_slope_zero_epsilon():
    m = _model(8, 0.1)
    sampler = RpaSampler(1.0 / (1.0 + m.grid.kmag ** 2), seed=19)
    scan = measure_kinetic_slope(m, sampler, [0.0], np.linspace(0.5, 2.5, 5), 8, dt=0.05)
    assert np.all(scan.runs[0].slope == 0)
    with pytest.raises(ValueError):
        measure_kinetic_slope(m, sampler, [0.1], np.linspace(0.5, 2.0, 4), 8, dt=0.05)


def test_kinetic_slope_small_run_shapes():
    m = _model(8, 0.1)
    sampler = RpaSampler(1.0 / (1.0 + m.grid.kmag ** 2), seed=20)
    scan = measure_kinetic_slope(m, sampler, [0.01, 0.02], np.linspace(1.0, 3.0, 5), 20, dt=0.05)
    assert len(scan.runs) == 2
    for run in scan.runs:
        assert run.dn.shape == (5, 8)
        assert np.all(np.isfinite(run.slope))
        assert np.allclose(run.slope, run.slope[m.grid.negation])
    ratio = scan.runs[1].theory_slope / scan.runs[0].theory_slope
    assert np.allclose(ratio, 4.0, rtol=1e-10)


def test_invariants_helpers():
    m = _model(8, 0.1)
    c = _random_state(8, R=2, seed=21)
    assert np.allclose(total_action(c), np.sum(np.abs(c) ** 2, axis=1))
    # H = sum omega |c|^2 + (eps/2) sum W conj(c) conj(c) c c over quartets
    q = m.grid.quartets()
    W = np.array([m.W(*t) for t in zip(*q)])
    quart = np.sum(W * np.conj(c[:, q[0]]) * np.conj(c[:, q[1]]) * c[:, q[2]] * c[:, q[3]], axis=1).real
    ref = np.sum(m.omega * np.abs(c) ** 2, axis=1) + 0.5 * 0.1 * quart
    assert np.allclose(hamiltonian(m, c), ref, rtol=1e-13)


def test_state_file_roundtrip(tmp_path):
    g = SpectralGrid(2, 4)
    b = _random_state(g.size, R=3, seed=22)
    p = tmp_path / "s.bin"
    write_states(p, b, g)
    got, N, d = read_states(p)
    assert np.array_equal(got, b) and (N, d) == (4, 2)
    raw = p.read_bytes()
    assert raw[:4] == b"WTLS"
    assert len(raw) == 24 + 3 * 16 * 16
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_states(p)


def test_rayleigh_reference_density():
    assert rayleigh_pdf(0.0, 1.0) == 1.0
