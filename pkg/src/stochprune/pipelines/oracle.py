"""Reference gradients of the Gibbs risk w.r.t. keep probabilities.

The Gibbs risk is multilinear in ``lam``, so its partial derivative in
``lam_i`` is the difference of the conditional risks with bit ``i`` forced on
and off.  ``algorithm1_exact`` enumerates every mask; ``algorithm1_mc``
estimates both conditional risks from one shared pool of sampled masks; and
``gs_gradient`` averages pathwise gradients through relaxed masks.
"""

import numpy as np

from .. import nn
from ..masks import MaskDistribution, sample_concrete
from ..rng import substream

MAX_EXACT_D = 15
CHUNK = 2048


def _all_masks(D):
    codes = np.arange(1 << D, dtype=np.int64)
    return ((codes[:, None] >> np.arange(D)) & 1).astype(np.float64)


def _mask_losses(net, inputs, labels, masks, loss):
    out = np.empty(masks.shape[0])
    for s in range(0, masks.shape[0], CHUNK):
        out[s:s + CHUNK] = nn.losses_many(net, inputs, labels, masks[s:s + CHUNK] * net.weights, loss)
    return out


def algorithm1_exact(net, inputs, labels, lam, loss="cross_entropy_clamped"):
    """Exact d(Gibbs risk)/d lam by summing over all 2^D masks.

    Returns ``(gradient, gibbs_risk)``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    D = lam.shape[0]
    if D > MAX_EXACT_D:
        raise ValueError(f"exact mode enumerates 2^D masks and needs D <= {MAX_EXACT_D}")
    B = _all_masks(D)
    L = _mask_losses(net, inputs, labels, B, loss)
    factors = np.where(B > 0, lam, 1.0 - lam)
    risk = float(np.prod(factors, axis=1) @ L)
    grad = np.empty(D)
    for i in range(D):
        # probability of the other bits, independent of bit i
        rest = np.prod(np.delete(factors, i, axis=1), axis=1)
        sign = np.where(B[:, i] > 0, 1.0, -1.0)
        grad[i] = np.sum(sign * rest * L)
    return grad, risk


def algorithm1_mc(net, inputs, labels, lam, m, seed=0, loss="cross_entropy_clamped"):
    """Monte Carlo version with ``m`` shared mask samples.

    ``e_i(1)`` and ``e_i(0)`` are the mean losses over samples whose bit
    ``i`` is on, respectively off.  Returns ``(gradient, valid)``; a
    coordinate whose sampled bits are all equal has no estimate
    (``valid=False``, gradient NaN).
    """
    lam = np.asarray(lam, dtype=np.float64)
    if m < 1:
        raise ValueError("need at least one sample")
    gen = substream(seed, 0, "algorithm1")
    B = (gen.random((m, lam.shape[0])) < lam).astype(np.float64)
    L = _mask_losses(net, inputs, labels, B, loss)
    on = B.sum(axis=0)
    valid = (on > 0) & (on < m)
    with np.errstate(invalid="ignore", divide="ignore"):
        e1 = (B.T @ L) / on
        e0 = ((1.0 - B).T @ L) / (m - on)
    grad = np.where(valid, e1 - e0, np.nan)
    return grad, valid


def gs_gradient(net, inputs, labels, lam, beta, n_samples, seed=0, loss="cross_entropy_clamped", chunk=512):
    """Mean pathwise gradient through relaxed masks, w.r.t. lam directly."""
    dist = MaskDistribution.from_lambda(lam, "clamp", beta)
    D = dist.size
    total = np.zeros(D)
    done = 0
    step = 0
    while done < n_samples:
        S = min(chunk, n_samples - done)
        gen = substream(seed, step, "gs-gradient")
        X = np.empty((S, D))
        dX = np.empty((S, D))
        for r in range(S):
            X[r], dX[r] = sample_concrete(dist, gen)
        _, G = nn.loss_and_grad_many(net, inputs, labels, X * net.weights, loss)
        total += np.sum(G * net.weights * dX, axis=0)
        done += S
        step += 1
    return total / n_samples


def gibbs_risk_exact(net, inputs, labels, lam, loss="zero_one"):
    """Exact Gibbs risk by enumeration; ``loss="zero_one"`` gives the 0-1 risk."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape[0] > 20:
        raise ValueError("enumeration limited to D <= 20")
    B = _all_masks(lam.shape[0])
    probs = np.prod(np.where(B > 0, lam, 1.0 - lam), axis=1)
    if loss == "zero_one":
        L = np.empty(B.shape[0])
        for s in range(0, B.shape[0], CHUNK):
            out = nn._trace_many(net, np.asarray(inputs, dtype=np.float64), B[s:s + CHUNK] * net.weights)[-1]
            L[s:s + CHUNK] = np.mean(out.argmax(axis=2) != np.asarray(labels), axis=1)
    else:
        L = _mask_losses(net, inputs, labels, B, loss)
    return float(probs @ L)

