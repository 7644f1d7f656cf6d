"""Numba-compiled twins of the kernels in ``_numpy``.

Inputs are assumed to be contiguous float64 arrays; the dispatch layer in
``stochprune.kernels`` takes care of that.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _kl1(q, p):
    if (p == 0.0 and q > 0.0) or (p == 1.0 and q < 1.0):
        return np.inf
    out = 0.0
    if q > 0.0:
        out += q * (math.log(q) - math.log(p))
    if q < 1.0:
        out += (1.0 - q) * (math.log1p(-q) - math.log1p(-p))
    return max(out, 0.0)


@njit(cache=True)
def concrete_relax(logit, u, beta):
    n = logit.shape[0]
    x = np.empty(n)
    g = np.empty(n)
    for i in range(n):
        li = logit[i]
        if li == np.inf:
            x[i] = 1.0
            g[i] = 0.0
        elif li == -np.inf:
            x[i] = 0.0
            g[i] = 0.0
        else:
            z = (li + math.log(u[i]) - math.log1p(-u[i])) / beta
            xi = _sigmoid(z)
            x[i] = xi
            g[i] = xi * (1.0 - xi) / beta
    return x, g


@njit(cache=True)
def bernoulli_kl(q, p):
    n = q.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = _kl1(q[i], p[i])
    return out


@njit(cache=True)
def kl_inverse(a, eps, max_iter=200):
    n = a.shape[0]
    out = np.empty(n)
    for i in range(n):
        ai = a[i]
        ei = eps[i]
        if ei <= 0.0:
            out[i] = ai
            continue
        if ai <= 0.0:
            out[i] = -math.expm1(-ei)
            continue
        lo = ai
        hi = 1.0
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if _kl1(ai, mid) <= ei:
                lo = mid
            else:
                hi = mid
        out[i] = hi if _kl1(ai, hi) <= ei else lo
    return out


@njit(cache=True)
def spike_slab_kl(lam, lam0, dmean, s2, sig2):
    n = lam.shape[0]
    terms = np.empty(n)
    d_lam = np.empty(n)
    d_mean = np.empty(n)
    for i in range(n):
        r = s2[i] / sig2[i]
        gamma = 0.5 * (dmean[i] * dmean[i] / sig2[i] + r - math.log(r) - 1.0)
        li = lam[i]
        l0 = lam0[i]
        terms[i] = _kl1(li, l0) + li * gamma
        if li <= 0.0:
            dk = -np.inf if l0 > 0.0 else 0.0
        elif li >= 1.0:
            dk = np.inf if l0 < 1.0 else 0.0
        else:
            dk = (math.log(li) - math.log1p(-li)) - (math.log(l0) - math.log1p(-l0))
        d_lam[i] = dk + gamma
        d_mean[i] = li * dmean[i] / sig2[i]
    return terms, d_lam, d_mean


@njit(cache=True)
def enumerate_linear_gibbs(phi, y, w, lam):
    m, d = phi.shape
    total = 0.0
    pred = np.empty(m)
    for code in range(1 << d):
        prob = 1.0
        for j in range(d):
            if (code >> j) & 1:
                prob *= lam[j]
            else:
                prob *= 1.0 - lam[j]
        if prob == 0.0:
            continue
        for r in range(m):
            pred[r] = -y[r]
        for j in range(d):
            if (code >> j) & 1:
                wj = w[j]
                for r in range(m):
                    pred[r] += phi[r, j] * wj
        sq = 0.0
        for r in range(m):
            sq += pred[r] * pred[r]
        total += prob * 0.5 * sq / m
    return total


@njit(cache=True)
def euler_flow(lam0, eta, h, tol, max_steps):
    n = lam0.shape[0]
    lam = lam0.copy()
    steps = np.zeros(n, dtype=np.int64)
    for i in range(n):
        l0 = lam0[i]
        logit0 = math.log(l0) - math.log1p(-l0)
        li = l0
        for _ in range(max_steps):
            rate = -li * (1.0 - li) * (eta[i] + math.log(li) - math.log1p(-li) - logit0)
            if abs(rate) < tol:
                break
            li += h * rate
            steps[i] += 1
        lam[i] = li
    return lam, steps
