"""Pure-numpy implementations of the hot kernels.

Every function here has a twin in ``_numba`` with the same signature and the
same results up to floating-point reassociation.
"""

import numpy as np


def concrete_relax(logit, u, beta):
    """Two-category concrete sample from logits and uniforms.

    Returns ``(x, dx_dlogit)``.  Infinite logits give the hard value with a
    zero derivative.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        noise = np.log(u) - np.log1p(-u)
        z = (logit + noise) / beta
        x = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
        g = x * (1.0 - x) / beta
    hard_hi = logit == np.inf
    hard_lo = logit == -np.inf
    x = np.where(hard_hi, 1.0, np.where(hard_lo, 0.0, x))
    g = np.where(hard_hi | hard_lo, 0.0, g)
    return x, g


def bernoulli_kl(q, p):
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(q > 0, q * (np.log(q) - np.log(p)), 0.0)
        t0 = np.where(q < 1, (1 - q) * (np.log1p(-q) - np.log1p(-p)), 0.0)
    out = t1 + t0
    out = np.where(((p == 0) & (q > 0)) | ((p == 1) & (q < 1)), np.inf, out)
    return np.maximum(out, 0.0)


def kl_inverse(a, eps, max_iter=200):
    a = np.asarray(a, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    a, eps = np.broadcast_arrays(a, eps)
    lo = a.astype(np.float64).copy()
    hi = np.ones_like(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        done = (mid <= lo) | (mid >= hi)
        if np.all(done):
            break
        below = bernoulli_kl(a, mid) <= eps
        lo = np.where(~done & below, mid, lo)
        hi = np.where(~done & ~below, mid, hi)
    # kl(a||1) is finite only when a == 1
    out = np.where(bernoulli_kl(a, hi) <= eps, hi, lo)
    out = np.where(eps <= 0, a, out)
    out = np.where(a <= 0, -np.expm1(-eps), out)
    return out


def spike_slab_kl(lam, lam0, dmean, s2, sig2):
    """Per-weight KL terms and their partial derivatives.

    Returns ``(terms, d_lam, d_mean)`` where ``dmean`` is the posterior minus
    prior slab mean.
    """
    gamma = 0.5 * (dmean * dmean / sig2 + s2 / sig2 - np.log(s2 / sig2) - 1.0)
    terms = bernoulli_kl(lam, lam0) + lam * gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        dk = (np.log(lam) - np.log1p(-lam)) - (np.log(lam0) - np.log1p(-lam0))
    dk = np.where(np.isnan(dk), 0.0, dk)
    d_lam = dk + gamma
    d_mean = lam * dmean / sig2
    return terms, d_lam, d_mean


def enumerate_linear_gibbs(phi, y, w, lam):
    """Exact Gibbs squared-error risk by summing over all 2^D masks."""
    m, d = phi.shape
    total = 0.0
    for code in range(1 << d):
        bits = ((code >> np.arange(d)) & 1).astype(bool)
        prob = np.prod(np.where(bits, lam, 1.0 - lam))
        if prob == 0.0:
            continue
        r = phi @ np.where(bits, w, 0.0) - y
        total += prob * 0.5 * (r @ r) / m
    return total


def euler_flow(lam0, eta, h, tol, max_steps):
    """Euler steps of the preconditioned drift flow, vectorised over items.

    d lam / d tau = -lam (1 - lam) (eta + logit(lam) - logit(lam0)).
    Returns ``(lam, steps)``.
    """
    lam0 = np.asarray(lam0, dtype=np.float64).copy()
    eta = np.asarray(eta, dtype=np.float64)
    lam = lam0.copy()
    steps = np.zeros(lam.shape, dtype=np.int64)
    logit0 = np.log(lam0) - np.log1p(-lam0)
    active = np.ones(lam.shape, dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        rate = -lam * (1.0 - lam) * (eta + np.log(lam) - np.log1p(-lam) - logit0)
        active &= np.abs(rate) >= tol
        lam = np.where(active, lam + h * rate, lam)
        steps += active
    return lam, steps
