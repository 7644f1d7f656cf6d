"""Auxiliary experiments: robustness, mask overlap, strong LTH, mask stability, entropy."""

import math
from dataclasses import asdict, replace

import numpy as np

from .. import criteria, masks, nn
from ..rng import substream
from .common import StochasticConfig, train_stochastic
from .pbp import PbpConfig, pbp
from .pft import PftConfig, pft, pretrain


def _mean_ci(values, z=1.96):
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(z * v.std(ddof=1) / math.sqrt(v.size))


# -- robustness ---------------------------------------------------------------

def robustness_curve(net, mask, data, variances, n_draws=20, seed=0):
    """Error under Gaussian weight noise ``W + v * zeta`` for each ``v``.

    Noise touches kept weights only (pruned weights stay zero).  ``drop`` is
    the accuracy lost relative to the unperturbed accuracy,
    ``(acc_0 - acc_v) / acc_0``.  Rows: ``(v, error, drop)``.
    """
    D = net.n_weights
    keep = np.ones(D) if mask is None else np.asarray(mask, dtype=np.float64)
    base_w = net.weights * keep
    err0 = nn.eval_01(net.replace(weights=base_w), data.inputs, data.labels)
    acc0 = max(1.0 - err0, 1e-12)
    rows = []
    for j, v in enumerate(variances):
        if v == 0:
            rows.append((0.0, err0, 0.0))
            continue
        errs = np.empty(n_draws)
        for r in range(n_draws):
            zeta = substream(seed, j * n_draws + r, "robustness").standard_normal(D)
            errs[r] = nn.eval_01(net.replace(weights=base_w + v * zeta * keep), data.inputs, data.labels)
        err = float(errs.mean())
        rows.append((float(v), err, ((1.0 - err0) - (1.0 - err)) / acc0))
    return rows


def robustness_compare(train, test, cfg, variances, n_draws=20):
    """Dense vs magnitude-pruned-and-finetuned net from one pretraining run."""
    dense, _ = pretrain(train, cfg)
    scores = criteria.score_magnitude(dense)
    mask = masks.threshold_topk(scores, cfg.sparsity)
    sparse, _ = nn.train(dense.replace(weights=dense.weights * mask), train.inputs, train.labels,
                         cfg.sgd(cfg.finetune_epochs, cfg.finetune_lr, 2), mask=mask)
    dense_rows = robustness_curve(dense, None, test, variances, n_draws, cfg.seed)
    sparse_rows = robustness_curve(sparse, mask, test, variances, n_draws, cfg.seed)
    return [(v, d_err, d_drop, s_err, s_drop)
            for (v, d_err, d_drop), (_, s_err, s_drop) in zip(dense_rows, sparse_rows)]


# -- overlap ------------------------------------------------------------------

def overlap_vs_sparsity(train, test, criteria_list, sparsities, seeds, base_cfg=None):
    """Overlap of OSP and PFT masks; rows ``(criterion, s, seed, overlap)``.

    Pretraining is shared across criteria and sparsities for a given seed;
    the final fine-tuning is skipped since only the masks matter here.
    """
    base_cfg = base_cfg or PftConfig()
    rows = []
    for seed in seeds:
        cfg0 = replace(base_cfg, seed=seed)
        dense, _ = pretrain(train, cfg0)
        for crit in criteria_list:
            for s in sparsities:
                cfg = replace(cfg0, criterion=crit, sparsity=s, finetune_epochs=0)
                out = pft(train, test, cfg, dense=dense)
                rows.append((crit, float(s), int(seed), out["metrics"]["overlap"]))
    return rows


def summarize_overlap(rows):
    """Mean and 95% CI per (criterion, sparsity)."""
    groups = {}
    for crit, s, _, ov in rows:
        groups.setdefault((crit, s), []).append(ov)
    return {key: _mean_ci(v) for key, v in sorted(groups.items())}


# -- strong lottery tickets ---------------------------------------------------

def strong_lth(train, test, net_init, cfg, mask_epochs=100, mask_lr=0.5, epsilon=0.01, n_samples=10,
               mode="clamp"):
    """Train keep probabilities of an untrained net with frozen weights.

    Returns errors of ``n_samples`` hard masks from the untrained and the
    trained distribution plus the training trace.
    """
    scores = criteria.score_magnitude(net_init)
    dist = masks.init_block_isotropic(scores, cfg.sparsity, epsilon, mode, cfg.beta)
    scfg = StochasticConfig(epochs=mask_epochs, mask_lr=mask_lr, momentum=cfg.momentum,
                            batch_size=cfg.batch_size, train_weights=False, train_biases=False,
                            seed=cfg.seed + 5)
    st = train_stochastic(net_init, dist, train.inputs, train.labels, scfg)

    def hard_errors(d, purpose):
        out = []
        for r in range(n_samples):
            mk = masks.sample_bernoulli(d, substream(cfg.seed, r, purpose))
            out.append(nn.eval_01(net_init, test.inputs, test.labels, mk))
        return np.asarray(out)

    before = hard_errors(dist, "lth-untrained")
    after = hard_errors(st.dist, "lth-trained")
    return {"untrained": before, "trained": after, "trace": st.trace,
            "untrained_mean_ci": _mean_ci(before), "trained_mean_ci": _mean_ci(after),
            "distribution": st.dist}


# -- mask stability -----------------------------------------------------------

def mask_stability(train, net_init, n_runs, sparsity, sgd_cfg, shuffle_seeds=None):
    """Keep frequency of magnitude masks over runs that differ only in shuffling.

    Returns ``(freq, table)`` where ``table`` rows are ``(index, freq,
    mean|w|, std|w|)`` for weights whose frequency lies strictly in (0, 1).
    """
    seeds = list(shuffle_seeds) if shuffle_seeds is not None else list(range(n_runs))
    if len(seeds) != n_runs:
        raise ValueError("need one shuffle seed per run")
    D = net_init.n_weights
    kept = np.zeros(D)
    mags = np.empty((n_runs, D))
    for r, s in enumerate(seeds):
        trained, _ = nn.train(net_init, train.inputs, train.labels, replace(sgd_cfg, seed=s))
        mags[r] = np.abs(trained.weights)
        kept += masks.threshold_topk(mags[r], sparsity)
    freq = kept / n_runs
    mid = np.flatnonzero((freq > 0) & (freq < 1))
    table = [(int(i), float(freq[i]), float(mags[:, i].mean()), float(mags[:, i].std())) for i in mid]
    return freq, table


# -- entropy ------------------------------------------------------------------

def entropy_vs_bound(train, test, cfg, downweights=(1.0,)):
    """PBP runs over KL down-weighting factors; rows ``(d, entropy, bound, test error)``.

    Certificates are always evaluated with the true KL, so every bound in the
    table is valid whatever ``d`` was used for training.
    """
    rows = []
    for d in downweights:
        out = pbp(train, test, PbpConfig(**{**asdict(cfg), "kl_downweight": float(d)}))
        m = out["metrics"]
        rows.append((float(d), m["entropy"], m["bound"], m["posterior_gibbs_test_err"]))
    return rows
