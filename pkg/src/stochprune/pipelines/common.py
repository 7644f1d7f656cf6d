"""Minibatch trainer for nets whose weights carry a stochastic mask.

Each step draws one relaxed mask (and optionally Gaussian slab noise) per
batch, backpropagates to the effective weights and from there to the mask
parameters, the slab means and the biases.  An optional ``penalty`` callback
adds an analytic term (e.g. a KL divergence) and may rescale the data
gradient, which is how bound objectives are trained.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .. import nn
from ..exceptions import DivergenceError
from ..masks import MaskDistribution, map_probability, map_probability_grad, project_budget, sample_concrete
from ..rng import substream


@dataclass
class StochasticConfig:
    epochs: int = 1
    lr: float = 0.01
    mask_lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    train_weights: bool = True
    train_biases: bool = True
    train_mask: bool = True
    sigma: float = 0.0
    per_example: bool = False
    budget: object = None
    seed: int = 0


@dataclass
class StochasticState:
    net: nn.DenseNet
    dist: MaskDistribution
    trace: list = field(default_factory=list)


def _draw(dist, mean, sigma, gen):
    x, dx = sample_concrete(dist, gen)
    if sigma > 0:
        noise = sigma * gen.standard_normal(mean.shape[0])
        slab = mean + noise
    else:
        slab = mean
    return x, dx, slab


def train_stochastic(net, dist, inputs, labels, cfg, penalty=None, loss="cross_entropy_clamped"):
    """Train mask parameters and/or weights through relaxed mask samples.

    ``penalty(raw, mean, batch_loss)`` returns ``(value, data_scale, g_raw,
    g_mean)``: the objective is ``data_scale * loss + value`` locally, with
    gradients ``g_raw``/``g_mean`` of ``value``.  ``cfg.budget`` caps the
    expected keep count after every mask step; it may be a number or a
    callable ``(epoch, current_sum) -> number or None``.  Returns a StochasticState
    with the per-epoch mean objective in ``trace``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    n = x.shape[0]
    raw = dist.raw.copy()
    w = net.weights.copy()
    b = net.biases.copy()
    v_raw, v_w, v_b = np.zeros_like(raw), np.zeros_like(w), np.zeros_like(b)
    trace = []
    step = 0
    for epoch in range(cfg.epochs):
        budget = cfg.budget(epoch, map_probability(raw, dist.mode).sum()) if callable(cfg.budget) else cfg.budget
        order = substream(cfg.seed, epoch, "stochastic-shuffle").permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            cur = MaskDistribution(raw, dist.mode, dist.beta)
            gen = substream(cfg.seed, step, "mask-sample")
            step += 1
            if cfg.per_example:
                g_raw = np.zeros_like(raw)
                g_w = np.zeros_like(w)
                g_b = np.zeros_like(b)
                value = 0.0
                for r in idx:
                    mk, dx, slab = _draw(cur, w, cfg.sigma, gen)
                    v, gw_eff, gb, _ = nn.loss_and_grad(net, x[r:r + 1], labels[r:r + 1], mk * slab, loss, b)
                    g_raw += gw_eff * slab * dx
                    g_w += gw_eff * mk
                    g_b += gb
                    value += v
                k = len(idx)
                g_raw /= k
                g_w /= k
                g_b /= k
                value /= k
            else:
                mk, dx, slab = _draw(cur, w, cfg.sigma, gen)
                value, gw_eff, g_b, _ = nn.loss_and_grad(net, x[idx], labels[idx], mk * slab, loss, b)
                g_raw = gw_eff * slab * dx
                g_w = gw_eff * mk
            objective = value
            if penalty is not None:
                p_val, scale, p_raw, p_w = penalty(raw, w, value)
                objective = scale * value + p_val
                g_raw = scale * g_raw + p_raw
                g_w = scale * g_w + p_w
                g_b = scale * g_b
            if cfg.train_mask:
                v_raw = cfg.momentum * v_raw + g_raw
                raw = raw - cfg.mask_lr * v_raw
                if budget is not None:
                    raw = project_budget(raw, dist.mode, budget)
            if cfg.train_weights:
                v_w = cfg.momentum * v_w + g_w
                w = w - cfg.lr * v_w
            if cfg.train_biases:
                v_b = cfg.momentum * v_b + g_b
                b = b - cfg.lr * v_b
            total += objective * len(idx)
        mean_obj = total / n
        if not (math.isfinite(mean_obj) and np.isfinite(raw).all() and np.isfinite(w).all()):
            raise DivergenceError(epoch, mean_obj)
        trace.append(mean_obj)
    return StochasticState(net.replace(weights=w, biases=b), MaskDistribution(raw, dist.mode, dist.beta), trace)


def raw_grad_from_lam(dist, g_lam):
    """Chain a gradient w.r.t. lam back to the raw parameters."""
    return g_lam * map_probability_grad(dist.raw, dist.mode)


def sample_weights(lam, mean, sigma, gen, n):
    """``n`` hard draws of masked (and optionally noisy) weights, shape (n, D)."""
    keep = gen.random((n, lam.shape[0])) < lam
    slab = mean if np.all(sigma == 0) else mean + sigma * gen.standard_normal((n, lam.shape[0]))
    return np.where(keep, slab, 0.0)


def gibbs_01(net, inputs, labels, lam, mean, sigma, m, seed, purpose="gibbs-01"):
    """0-1 error of ``m`` independent draws from the masked slab distribution."""
    out = np.empty(m)
    for k in range(m):
        gen = substream(seed, k, purpose)
        wk = sample_weights(lam, mean, sigma, gen, 1)[0]
        out[k] = nn.eval_01(net.replace(weights=wk), inputs, labels)
    return out
