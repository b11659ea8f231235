"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time.  Set ``WTLAB_DISABLE_NUMBA=1`` to
force the numpy implementations (useful for debugging and for the
benchmark).  Both backends implement the same functions with the same
summation order, so they agree to rounding.
"""

from __future__ import annotations

import logging
import os
import warnings

from . import _numpy as numpy_impl

log = logging.getLogger(__name__)

# numba probes for TBB and warns when the system copy is old; workqueue/omp are fine
warnings.filterwarnings("ignore", message="The TBB threading layer")

try:
    from . import _numba as numba_impl
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba_impl = None
    HAVE_NUMBA = False

_DISABLED = os.environ.get("WTLAB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}
BACKEND = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"
_impl = numba_impl if BACKEND == "numba" else numpy_impl

KERNEL_NAMES = (
    "nonlinear_term",
    "quartet_term",
    "collision_sums",
    "advance",
    "pdf_advance",
)


def get_impl(backend: str | None = None):
    """Return the kernel module for ``backend`` (default: the active one)."""
    if backend is None:
        return _impl
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        return numba_impl
    if backend == "numpy":
        return numpy_impl
    raise ValueError(f"unknown backend {backend!r}")


def set_threads(n: int | None) -> int:
    """Set the numba worker count; returns the count actually in effect.

    Results never depend on this value: every parallel loop runs over
    independent realizations or modes with a fixed inner summation order.
    """
    if BACKEND != "numba" or n is None:
        return 1 if BACKEND != "numba" else _numba_threads()
    import numba

    cap = numba.config.NUMBA_NUM_THREADS
    if n > cap:
        log.warning("requested %d threads, numba is limited to %d (NUMBA_NUM_THREADS)", n, cap)
        n = cap
    numba.set_num_threads(max(1, int(n)))
    return numba.get_num_threads()


def _numba_threads() -> int:
    import numba

    return numba.get_num_threads()


def nonlinear_term(c, fac, pair_index, n_sum):
    return _impl.nonlinear_term(c, fac, pair_index, n_sum)


def quartet_term(c, quartets, weights):
    return _impl.quartet_term(c, quartets, weights)


def collision_sums(targets, pair_index, ptr, pm, pn, omega, fac2, n, T, literal):
    return _impl.collision_sums(targets, pair_index, ptr, pm, pn, omega, fac2, n, T, literal)


def advance(state, omega, fac, pair_index, n_sum, coef, t0, dt, nsteps, rotating,
            noise, damp, cap, phases, cap_count, cadence=1, step0=0):
    return _impl.advance(state, omega, fac, pair_index, n_sum, coef, t0, dt, nsteps, rotating,
                         noise, damp, cap, phases, cap_count, cadence, step0)


def pdf_advance(P, width, A, C, top, dt, nsteps, mode, inject):
    return _impl.pdf_advance(P, width, A, C, top, dt, nsteps, mode, inject)
