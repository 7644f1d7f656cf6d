"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time of each backend and
the speedup.  The first numba call (compilation) is excluded.
"""

import argparse
import time

import numpy as np

from stochprune.kernels import numba_impl, numpy_impl


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    D = 150_000
    logit = rng.standard_normal(D)
    u = rng.uniform(1e-12, 1 - 1e-12, D)
    q, p = rng.uniform(0.01, 0.99, D), rng.uniform(0.01, 0.99, D)
    a, eps = rng.uniform(0, 0.9, 20_000), rng.uniform(1e-6, 0.5, 20_000)
    dm = 1e-3 * rng.standard_normal(D)
    s2 = np.full(D, np.exp(-9.0))
    phi, y = rng.standard_normal((200, 12)), rng.standard_normal(200)
    w, lam = rng.standard_normal(12), rng.uniform(0.1, 0.9, 12)
    lam0, eta = rng.uniform(0.1, 0.9, 50), rng.uniform(-10, 10, 50)
    return {
        "concrete_relax": lambda m: m.concrete_relax(logit, u, 0.5),
        "bernoulli_kl": lambda m: m.bernoulli_kl(q, p),
        "kl_inverse": lambda m: m.kl_inverse(a, eps),
        "spike_slab_kl": lambda m: m.spike_slab_kl(q, p, dm, s2, s2),
        "enumerate_linear_gibbs": lambda m: m.enumerate_linear_gibbs(phi, y, w, lam),
        "euler_flow": lambda m: m.euler_flow(lam0, eta, 1e-3, 1e-10, 5_000_000),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':<24}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for name, call in cases(np.random.default_rng(args.seed)).items():
        call(numba_impl)  # compile
        t_np = best_of(lambda: call(numpy_impl), args.repeat)
        t_nb = best_of(lambda: call(numba_impl), args.repeat)
        print(f"{name:<24}{t_np:>12.5f}{t_nb:>12.5f}{t_np / t_nb:>10.1f}x")


if __name__ == "__main__":
    main()
