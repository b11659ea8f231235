"""Wall-clock timings of the hot kernels under the active backend.

    python3 benchmarks/bench_kernels.py            # active backend
    python3 benchmarks/bench_kernels.py --both     # numba and the numpy fallback, side by side

The numpy run is a subprocess with WTLAB_DISABLE_NUMBA=1, since the backend is fixed at import.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from wtlab import ensemble as ens
from wtlab import kernels
from wtlab.collision import rates_discrete
from wtlab.pdf import evolve_pdf, make_grid, max_stable_dt, rayleigh_cells
from wtlab.wave_model import InteractionModel, SpectralGrid, WaveModel, power_law


def _best(fn, repeat):
    fn()  # warm-up (JIT compilation)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def run(repeat: int) -> dict:
    out = {}
    m1 = WaveModel(SpectralGrid(1, 64), power_law(1.0, 2.0), InteractionModel(), 0.1)
    n1 = 1.0 / (1.0 + m1.grid.kmag ** 2)
    out["collision_sums 1D N=64"] = _best(lambda: rates_discrete(m1, n1, T=20.0), repeat)

    m2 = WaveModel(SpectralGrid(2, 16), power_law(1.0, 2.0), InteractionModel(), 0.1)
    n2 = 1.0 / (1.0 + m2.grid.kmag ** 2)
    out["collision_sums 2D 16x16"] = _best(lambda: rates_discrete(m2, n2, T=20.0), repeat)

    b = ens.sample_ensemble(ens.RpaSampler(n2, seed=1), 32)
    out["nonlinear_term 2D 16x16, R=32"] = _best(lambda: ens.rhs_dynamical(m2, b, 0.3), repeat)

    m3 = WaveModel(SpectralGrid(1, 16), power_law(1.0, 0.5), InteractionModel(), 0.02)
    b3 = ens.sample_ensemble(ens.RpaSampler(1.0 / (1.0 + m3.grid.kmag ** 2), seed=2), 100)
    out["advance rk4 1D N=16, R=100, 1000 steps"] = _best(lambda: ens.integrate(m3, b3, 10.0, 0.01, "rk4"), repeat)
    out["advance ifrk4 1D N=16, R=100, 1000 steps"] = _best(
        lambda: ens.integrate(m3, b3, 100.0, 0.1, "ifrk4"), repeat)

    edges = make_grid(1.0, 50.0, 400)
    pdf = rayleigh_cells(edges, 1.0)
    dt = max_stable_dt(edges, 1.0, 1.0)
    out["pdf_advance 400 cells, 10^4 steps"] = _best(lambda: evolve_pdf(pdf, 1.0, 1.0, dt, 1e4 * dt), repeat)
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--both", action="store_true", help="also time the numpy fallback")
    p.add_argument("--json", action="store_true", help="print raw timings as JSON")
    args = p.parse_args(argv)
    res = {kernels.BACKEND: run(args.repeat)}
    if args.both and kernels.BACKEND == "numba":
        env = dict(os.environ, WTLAB_DISABLE_NUMBA="1")
        r = subprocess.run([sys.executable, __file__, "--json", "--repeat", str(args.repeat)], env=env,
                           capture_output=True, text=True, check=True)
        res.update(json.loads(r.stdout))
    if args.json:
        print(json.dumps(res))
        return 0
    backends = list(res)
    print(f"{'kernel':45s}" + "".join(f"{b:>12s}" for b in backends))
    for name in res[backends[0]]:
        print(f"{name:45s}" + "".join(f"{res[b][name] * 1e3:10.2f}ms" for b in backends))
    if len(backends) == 2:
        sp = np.array([res["numpy"][k] / res["numba"][k] for k in res["numba"]])
        print(f"geometric-mean speed-up of numba over numpy: {np.exp(np.mean(np.log(sp))):.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
