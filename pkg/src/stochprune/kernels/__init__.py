"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``STOCHPRUNE_NUMBA`` is not set to ``0``/``false``/``off``.  Both
implementations are always reachable as ``kernels.numpy_impl`` and
``kernels.numba_impl`` (the latter is ``None`` without numba), which is what
the equivalence tests and ``benchmarks/bench_kernels.py`` rely on.
"""

import os

import numpy as np

from . import _numpy as numpy_impl

try:
    from . import _numba as numba_impl
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

_FLAG = os.environ.get("STOCHPRUNE_NUMBA", "1").strip().lower()
USE_NUMBA = numba_impl is not None and _FLAG not in ("0", "false", "off", "no")

backend = "numba" if USE_NUMBA else "numpy"


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _flat_pair(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))
    return _f64(a.ravel()), _f64(b.ravel()), a.shape


def concrete_relax(logit, u, beta):
    """Relaxed Bernoulli sample ``x`` and ``dx/dlogit`` for every entry."""
    logit = np.asarray(logit, dtype=np.float64)
    shape = logit.shape
    if USE_NUMBA:
        x, g = numba_impl.concrete_relax(_f64(logit.ravel()), _f64(np.ravel(u)), float(beta))
    else:
        x, g = numpy_impl.concrete_relax(logit.ravel(), np.ravel(u), float(beta))
    return x.reshape(shape), g.reshape(shape)


def bernoulli_kl(q, p):
    q, p, shape = _flat_pair(q, p)
    impl = numba_impl if USE_NUMBA else numpy_impl
    out = impl.bernoulli_kl(q, p).reshape(shape)
    return out if shape else float(out)


def kl_inverse(a, eps):
    a, eps, shape = _flat_pair(a, eps)
    impl = numba_impl if USE_NUMBA else numpy_impl
    out = impl.kl_inverse(a, eps).reshape(shape)
    return out if shape else float(out)


def spike_slab_kl(lam, lam0, dmean, s2, sig2):
    args = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (lam, lam0, dmean, s2, sig2)))
    flat = [_f64(v.ravel()) for v in args]
    impl = numba_impl if USE_NUMBA else numpy_impl
    terms, d_lam, d_mean = impl.spike_slab_kl(*flat)
    shape = args[0].shape
    return terms.reshape(shape), d_lam.reshape(shape), d_mean.reshape(shape)


def enumerate_linear_gibbs(phi, y, w, lam):
    impl = numba_impl if USE_NUMBA else numpy_impl
    return float(impl.enumerate_linear_gibbs(_f64(phi), _f64(y), _f64(w), _f64(lam)))


def euler_flow(lam0, eta, h=1e-4, tol=1e-10, max_steps=50_000_000):
    lam0, eta, shape = _flat_pair(lam0, eta)
    impl = numba_impl if USE_NUMBA else numpy_impl
    lam, steps = impl.euler_flow(lam0, eta, float(h), float(tol), int(max_steps))
    return lam.reshape(shape), steps.reshape(shape)
