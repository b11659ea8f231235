"""``wtlab`` command line: one subcommand per experiment kind, plus ``compare``.

Exit codes: 0 success, 2 a run check failed, 1 error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
from scipy import integrate

from . import __version__, kernels
from . import collision, ensemble, io, kinetic, pdf, report
from .config import KINDS, ConfigError, ExperimentConfig, emit_config, load_config
from .wave_model import (CascadeScaling, SpectralGrid, WaveModel, breakdown_wavenumber, constant_coupling,
                         deep_water, power_law, product_power, tail_area_parameter)

log = logging.getLogger("wtlab")

EXIT_OK, EXIT_ERROR, EXIT_CHECK = 0, 1, 2


# ---------------------------------------------------------------------------
# builders from config sections


def build_model(sec: dict) -> WaveModel:
    grid = SpectralGrid(sec["grid.d"], sec["grid.n"], sec["grid.length"])
    if sec["dispersion.kind"] == "power_law":
        law = power_law(sec["dispersion.c"], sec["dispersion.alpha"])
    else:
        law = deep_water(sec["dispersion.g"])
    if sec["interaction.kind"] == "constant":
        coup = constant_coupling(sec["interaction.w0"])
    else:
        coup = product_power(sec["interaction.w0"], sec["interaction.beta"])
    return WaveModel(grid, law, coup, sec["epsilon"])


def spectrum_function(sec: dict):
    A, w, x = sec["amplitude"], sec["width"], sec["exponent"]
    kind = sec["kind"]
    if kind == "lorentzian":
        return lambda k: A / (1.0 + (np.asarray(k) / w) ** 2)
    if kind == "gaussian":
        return lambda k: A * np.exp(-(np.asarray(k) / w) ** 2)
    if kind == "power":
        return lambda k: A * (1.0 + np.asarray(k) / w) ** (-x)
    return lambda k: A * np.ones_like(np.asarray(k, dtype=float))


# ---------------------------------------------------------------------------
# runners: each returns (files written, checks, extra manifest fields)


def run_rates(cfg, out: Path):
    model = build_model(cfg["wave_model"])
    col = cfg["collision"]
    nf = spectrum_function(cfg["spectrum"])
    n = nf(model.grid.kmag)
    r = collision.rates_discrete(model, n, col["T"], col["convention"])
    rows = [(i, r.kmag[i], n[i], r.eta[i], r.gamma[i], r.eta[i] - r.gamma[i] * n[i]) for i in range(n.size)]
    files = [io.write_csv(out / "rates.csv", ["mode", "kmag", "n", "eta", "gamma", "dndt"], rows)]
    checks = {"finite": bool(np.all(np.isfinite(r.eta)) and np.all(np.isfinite(r.gamma)))}
    extra = {"T": r.T}
    if col["continuum"]:
        quad = collision.QuadratureSpec(nodes=col["quad_nodes"], root_tol=col["root_tol"], box=col["quad_box"])
        ks = np.unique(np.round(model.grid.kmag, 12))
        ks = ks[ks > 0]
        cr = collision.rates_continuum(model, ks, nf, quad, col["convention"])
        crow = [(k, e, g) for k, e, g in zip(ks, cr.eta, cr.gamma)]
        files.append(io.write_csv(out / "rates_continuum.csv", ["kmag", "eta", "gamma"], crow))
        checks["continuum_finite"] = bool(np.all(np.isfinite(cr.eta)))
    return files, checks, extra


def run_kinetic(cfg, out: Path):
    model = build_model(cfg["wave_model"])
    col, kin = cfg["collision"], cfg["kinetic"]
    n0 = spectrum_function(cfg["spectrum"])(model.grid.kmag)
    tr = kinetic.evolve_spectrum(model, n0, kin["t_end"], kin["dt"], T=col["T"], convention=col["convention"],
                                 record_every=kin["record_every"])
    rows = [(t, j, model.grid.kmag[j], tr.n[i, j]) for i, t in enumerate(tr.t) for j in range(n0.size)]
    files = [io.write_csv(out / "spectrum.csv", ["t", "mode", "kmag", "n"], rows)]
    return files, {"nonnegative": tr.clipped == 0}, {"clipped": tr.clipped}


def run_moments(cfg, out: Path):
    sec = cfg["kinetic"]
    M0 = kinetic.gaussian_moments(sec["n0"], sec["pmax"])
    tr = kinetic.evolve_moments(M0, (sec["eta"], sec["gamma"]), sec["t_end"], sec["dt"], sec["record_every"])
    rows = [(t, p, tr.M[i, p]) for i, t in enumerate(tr.t) for p in range(sec["pmax"] + 1)]
    files = [io.write_csv(out / "moments.csv", ["t", "p", "M"], rows)]
    checks = {}
    if math.isclose(sec["gamma"] * sec["n0"], sec["eta"], rel_tol=1e-12):
        dev = np.max(np.abs(tr.M[-1] - M0) / M0)
        checks["gaussian_fixed_point"] = bool(dev <= 1e-10)
    return files, checks, {}


def run_pdf_steady(cfg, out: Path):
    sec = cfg["pdf"]
    n, g = sec["n"], sec["gamma"]
    eta = g * n
    if sec["snl_over_n"] is not None:
        sol = pdf.steady_pdf_with_cutoff(n, g, eta, sec["snl_over_n"] * n, sec["cells"], weight=sec["cutoff_weight"],
                                         scheme=sec["scheme"])
        p = sol.pdf
        rows = [(a, b, c, d) for a, b, c, d in zip(p.edges[:-1], p.edges[1:], p.centers, p.P)]
        files = [io.write_csv(out / "pdf_steady.csv", ["s_lo", "s_hi", "s", "density"], rows)]
        checks = {"normalization": abs(p.mass() - 1.0) <= 1e-10, "balance": sol.balance_error <= 1e-8}
        return files, checks, {"leakage": sol.leakage, "balance_error": sol.balance_error}
    F = sec["flux"]
    sol = pdf.FluxSolution(n, eta, g, F, 1.0 / n)
    s = np.geomspace(1e-2 * n, sec["smax_over_n"] * n, sec["points"])
    P = pdf.steady_pdf_finite_flux(s, sol)
    dP = pdf.steady_pdf_finite_flux_derivative(s, sol)
    resid = np.abs(pdf.flux_of(P, dP, s, g, eta) - F)
    rows = [(a, b) for a, b in zip(s, P)]
    files = [io.write_csv(out / "pdf_steady.csv", ["s", "density"], rows)]
    scale = max(abs(F), float(np.max(np.abs(g * s * P))))
    checks = {"flux_residual": float(np.max(resid)) <= 1e-10 * scale}
    if F == 0.0:
        mass, _ = integrate.quad(lambda x: pdf.steady_pdf_finite_flux(x, sol), 0.0, math.inf, epsrel=1e-12)
        checks["normalization"] = abs(mass - 1.0) <= 1e-10
    return files, checks, {"max_flux_residual": float(np.max(resid))}


def run_pdf_evolve(cfg, out: Path):
    sec = cfg["pdf"]
    n, g = sec["n"], sec["gamma"]
    eta = g * n
    s_nl = sec["snl_over_n"] * n if sec["snl_over_n"] is not None else None
    top = s_nl if s_nl is not None else sec["smax_over_n"] * n
    edges = pdf.make_grid(n, top, sec["cells"])
    p0 = pdf.rayleigh_cells(edges, n, s_nl)
    dt = sec["dt"]
    if dt is None:
        lim = pdf.max_stable_dt(edges, g, eta)
        dt = sec["t_end"] / math.ceil(sec["t_end"] / lim)
    tr = pdf.evolve_pdf(p0, g, eta, dt, sec["t_end"], sec["boundary"], snapshots=sec["snapshots"],
                        scheme=sec["scheme"], cutoff_weight=sec["cutoff_weight"])
    c = 0.5 * (edges[:-1] + edges[1:])
    rows = [(t, a, b, x, tr.P[i, j]) for i, t in enumerate(tr.t)
            for j, (a, b, x) in enumerate(zip(edges[:-1], edges[1:], c))]
    files = [io.write_csv(out / "pdf_evolve.csv", ["t", "s_lo", "s_hi", "s", "density"], rows)]
    checks = {"mass": float(np.max(np.abs(tr.mass - tr.mass[0]))) <= 1e-12, "nonnegative": tr.pmin >= -1e-12}
    if sec["boundary"] == "zero_flux":
        checks["stationary"] = float(np.max(np.abs(tr.P[-1] - tr.P[0]))) <= 1e-8
    return files, checks, {"dt": dt}


def _histogram_rows(st, k, edges):
    est = ensemble.estimate_pdf(st, k, edges, min_samples=1)
    return est, [(a, b, d, e, c, est.total) for a, b, d, e, c in
                 zip(edges[:-1], edges[1:], est.density, est.stderr, est.counts)]


HIST_HEADER = ["s_lo", "s_hi", "density", "stderr", "count", "total"]


def run_ensemble(cfg, out: Path):
    model = build_model(cfg["wave_model"])
    sec = cfg["ensemble"]
    n = spectrum_function(cfg["spectrum"])(model.grid.kmag)
    sampler = ensemble.RpaSampler(n, sec["sampler"], cfg.seed)
    b0 = ensemble.sample_ensemble(sampler, sec["realizations"])
    dt = sec["dt"] if sec["dt"] is not None else ensemble.default_dt(model, b0, sec["scheme"])
    nsteps = max(1, math.ceil(sec["t_end"] / dt - 1e-9))
    dt = sec["t_end"] / nsteps
    tr = ensemble.integrate(model, b0, sec["t_end"], dt, sec["scheme"], record_every=sec["record_every"], seed=cfg.seed)
    files = []
    a0 = tr.action[0]
    e0 = np.abs(tr.energy[0])
    rows = [(t, np.mean(tr.action[i]), np.mean(tr.energy[i]), np.max(np.abs(tr.action[i] - a0) / a0),
             np.max(np.abs(tr.energy[i] - tr.energy[0]) / e0)) for i, t in enumerate(tr.t)]
    files.append(io.write_csv(out / "trajectory.csv", ["t", "action", "energy", "action_drift", "energy_drift"], rows))
    s0 = (b0 * np.conj(b0)).real
    s1 = tr.intensities()[-1]
    R = s1.shape[0]
    srow = [(j, model.grid.kmag[j], n[j], s0[:, j].mean(), s1[:, j].mean(), s1[:, j].std(ddof=1) / math.sqrt(R))
            for j in range(n.size)]
    files.append(io.write_csv(out / "spectrum.csv", ["mode", "kmag", "n", "n_initial", "n_final", "stderr"], srow))
    k = sec["mode"] if sec["mode"] is not None else int(np.argmin(model.grid.kmag))
    st = ensemble.EnsembleStats.from_states(tr.b[-1])
    nk = float(s1[:, k].mean())
    edges = np.linspace(0.0, sec["bin_max"] * nk, sec["bins"] + 1)
    _, hrows = _histogram_rows(st, k, edges)
    files.append(io.write_csv(out / "histogram.csv", HIST_HEADER, hrows))
    fine = np.linspace(0.0, sec["bin_max"] * nk, 20 * sec["bins"] + 1)
    files.append(io.write_csv(out / "rayleigh.csv", ["s", "density"],
                              [(x, y) for x, y in zip(fine, pdf.rayleigh_pdf(fine, nk))]))
    if sec["save_states"]:
        ensemble.write_states(out / "states.bin", tr.b[-1], model.grid)
        files.append(out / "states.bin")
    checks = {"conservation": tr.action_drift <= 1e-6 and tr.energy_drift <= 1e-6}
    extra = {"dt": dt, "action_drift": tr.action_drift, "energy_drift": tr.energy_drift, "histogram_mode": k,
             "realizations": R, "scheme": sec["scheme"]}
    return files, checks, extra


def run_cap_experiment(cfg, out: Path):
    model = build_model(cfg["wave_model"])
    sec, cap = cfg["ensemble"], cfg["cap"]
    forcing = ensemble.Forcing(**cfg["forcing"])
    damping = ensemble.Damping(**cfg["damping"])
    bc = ensemble.BreakingCap(cap["s_nl"], cap["policy"], cap["cadence"])
    dt = sec["dt"] if sec["dt"] is not None else 0.01
    run = ensemble.cap_experiment(model, forcing, damping, bc, sec["realizations"], sec["t_spinup"],
                                  sec["t_sample"], dt, sec["sample_every"], cfg.seed, scheme="ifrk4")
    M = model.grid.size
    k = sec["mode"] if sec["mode"] is not None else int(np.argsort(model.grid.kmag)[M // 2])
    x = run.samples[:, :, k]
    nk = float(np.mean(x))
    ex = ensemble.probability_excess(x, cap["excess_at"])
    st = ensemble.EnsembleStats(x.reshape(-1, 1), x.shape[1])
    edges = np.linspace(0.0, sec["bin_max"] * nk, sec["bins"] + 1)
    _, hrows = _histogram_rows(st, 0, edges)
    files = [io.write_csv(out / "histogram.csv", HIST_HEADER, hrows)]
    fine = np.linspace(0.0, sec["bin_max"] * nk, 20 * sec["bins"] + 1)
    files.append(io.write_csv(out / "rayleigh.csv", ["s", "density"],
                              [(a, b) for a, b in zip(fine, pdf.rayleigh_pdf(fine, nk))]))
    srow = [(j, model.grid.kmag[j], float(np.mean(run.samples[:, :, j])), int(run.cap_count[:, j].sum()))
            for j in range(M)]
    files.append(io.write_csv(out / "spectrum.csv", ["mode", "kmag", "n", "cap_events"], srow))
    checks = {"excess": ex.ratio > cap["excess_threshold"]}
    extra = {"mode": k, "kmag": float(model.grid.kmag[k]), "n": nk,
             "excess": {"at": cap["excess_at"], "ratio": ex.ratio, "ci95": [ex.lo, ex.hi], "count": ex.count,
                        "threshold": cap["excess_threshold"]},
             "normalization": "intensities in units of the sampled mean n at the reported mode"}
    return files, checks, extra


def run_scaling(cfg, out: Path):
    sec = cfg["scaling"]
    ks = np.geomspace(sec["kmin"], sec["kmax"], sec["points"])
    direct = CascadeScaling(sec["g"], sec["energy_flux"], sec["action_flux"], "direct")
    inverse = CascadeScaling(sec["g"], sec["energy_flux"], sec["action_flux"], "inverse")
    pd, pi = tail_area_parameter(direct, ks), tail_area_parameter(inverse, ks)
    kd, ki = breakdown_wavenumber(direct), breakdown_wavenumber(inverse)
    rows = [(k, a, b, kd, ki) for k, a, b in zip(ks, pd, pi)]
    header = ["k", "tail_parameter_direct", "tail_parameter_inverse", "k_nl_direct", "k_nl_inverse"]
    return [io.write_csv(out / "scaling.csv", header, rows)], {}, {}


RUNNERS = {
    "rates": run_rates,
    "kinetic": run_kinetic,
    "moments": run_moments,
    "pdf-steady": run_pdf_steady,
    "pdf-evolve": run_pdf_evolve,
    "ensemble": run_ensemble,
    "cap-experiment": run_cap_experiment,
    "scaling": run_scaling,
}


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Run, write CSVs and ``manifest.json`` into ``out_dir``; return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    files, checks, extra = RUNNERS[cfg.kind](cfg, out)
    io.atomic_write_text(out / "config.toml", emit_config(cfg))
    files = [Path(f) for f in files] + [out / "config.toml"]
    manifest = {
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "version": __version__,
        "backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_clock_s": time.time() - t0,
        "checks": {k: ("pass" if v else "fail") for k, v in checks.items()},
        "conventions": {
            "gamma_form": cfg.sections.get("collision", {}).get("convention", "equilibrium"),
            "discrete_normalization": collision.DISCRETE_NORMALIZATION,
            "cutoff_weight": cfg.sections.get("pdf", {}).get("cutoff_weight", pdf.DEFAULT_CUTOFF_WEIGHT),
        },
        "results": extra,
        "files": {f.name: io.sha256_file(f) for f in files},
    }
    io.write_manifest(out / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# argument handling


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("WTLAB_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"WTLAB_THREADS must be an integer, got {env!r}")
    return None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wtlab", description="Four-wave weak-turbulence laboratory")
    p.add_argument("--version", action="version", version=f"wtlab {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment")
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
        sp.add_argument("--threads", type=int, default=None)
    cp = sub.add_parser("compare", help="compare a theory CSV with an empirical CSV")
    cp.add_argument("theory", type=Path)
    cp.add_argument("empirical", type=Path)
    cp.add_argument("--out", type=Path, default=Path("."))
    cp.add_argument("--tail", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    cp.add_argument("--z-fraction", type=float, default=0.99,
                    help="required fraction of bins with |z| <= 3 (check fails below it)")
    cp.add_argument("--threads", type=int, default=None)
    cp.add_argument("--seed", type=int, default=None)
    cp.add_argument("--config", type=Path, default=None)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 2 means a failed check
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        kernels.set_threads(_threads(args.threads))
        if args.command == "compare":
            args.out.mkdir(parents=True, exist_ok=True)
            rep = report.compare_report(args.theory, args.empirical, args.out / "compare",
                                        tuple(args.tail) if args.tail else None)
            zs = "n/a" if rep.z_within3 is None else f"{100 * rep.z_within3:.1f}%"
            print(f"bins {rep.bins}  sup {rep.sup:.6g}  L1 {rep.l1:.6g}  |z|<=3 in {zs}")
            if rep.tail_empirical is not None:
                te = rep.tail_empirical
                print(f"tail exponent {te.slope:.4f}  95% CI [{te.ci_lo:.4f}, {te.ci_hi:.4f}]")
            if rep.z_within3 is None:
                return EXIT_OK
            return EXIT_OK if rep.z_within3 >= args.z_fraction else EXIT_CHECK
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("seed must be an unsigned 64-bit integer", "--seed")
            cfg.seed = args.seed
        if cfg.kind != args.command:
            raise ConfigError(f"config is for {cfg.kind!r}, command is {args.command!r}", "kind")
        out = args.out if args.out is not None else Path(cfg.out or ".")
        man = run_experiment(cfg, out)
        failed = [k for k, v in man["checks"].items() if v != "pass"]
        for k, v in man["checks"].items():
            print(f"{k}: {v}")
        print(f"manifest: {out / 'manifest.json'}")
        return EXIT_CHECK if failed else EXIT_OK
    except ConfigError as exc:
        print(f"wtlab: config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - report any module error with context, exit 1
        print(f"wtlab: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
