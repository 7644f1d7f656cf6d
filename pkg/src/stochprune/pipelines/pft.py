"""Probabilistic fine-tuning of pruning masks.

pretrain -> score -> initialize keep probabilities around the one-shot mask ->
train probabilities (and weights) through relaxed mask samples -> keep the
top-k probabilities -> fine-tune the sparse net.  The one-shot baseline skips
the middle step and fine-tunes the top-k score mask directly.
"""

import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import criteria, masks, nn
from .common import StochasticConfig, train_stochastic


@dataclass
class PftConfig:
    sparsity: float = 0.9
    criterion: str = "magnitude"
    init_scheme: str = "block_isotropic"
    epsilon: float = 1e-4
    beta: float = masks.DEFAULT_BETA
    hidden: tuple = (256, 256, 256)
    pretrain_epochs: int = 20
    pretrain_lr: float = 0.01
    stage2_epochs: int = 20
    stage2_lr: float = 0.01
    mask_lr: float = 60.0
    sparsity_budget: bool = True
    budget_free_epochs: int = 5
    optimize_weights_in_stage2: bool = True
    per_example_masks: bool = False
    finetune_epochs: int = 20
    finetune_lr: float = 0.01
    batch_size: int = 128
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError("sparsity must lie in [0, 1)")
        if self.criterion not in ("magnitude", "snip", "random"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.init_scheme not in ("isotropic", "block_isotropic"):
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")

    def sgd(self, epochs, lr, seed_offset):
        return nn.SgdConfig(lr, self.momentum, self.batch_size, max(epochs, 1), self.seed + seed_offset)


def architecture(n_in, n_out, hidden):
    return (n_in,) + tuple(hidden) + (n_out,)


def pretrain(train, cfg, net_init=None, n_classes=None):
    n_classes = n_classes or train.n_classes
    net = net_init or nn.init_dense(architecture(train.inputs.shape[1], n_classes, cfg.hidden), cfg.seed)
    if cfg.pretrain_epochs <= 0:
        return net, []
    return nn.train(net, train.inputs, train.labels, cfg.sgd(cfg.pretrain_epochs, cfg.pretrain_lr, 0))


def init_distribution(scores, cfg, mode="clamp"):
    if cfg.init_scheme == "isotropic":
        return masks.init_isotropic(scores.shape[0], cfg.sparsity, mode, cfg.beta)
    return masks.init_block_isotropic(scores, cfg.sparsity, cfg.epsilon, mode, cfg.beta)


def budget_schedule(k, total_epochs, free_epochs):
    """Expected-keep-count cap per epoch.

    No cap for the first ``free_epochs``; then the cap shrinks geometrically
    from the current expected count to ``k`` over two thirds of the remaining
    epochs and stays at ``k``.
    """
    state = {}
    ramp = max(1, 2 * (total_epochs - free_epochs) // 3)

    def cap(epoch, current):
        if epoch < free_epochs:
            return None
        start = state.setdefault("start", max(current, k))
        t = min(1.0, (epoch - free_epochs + 1) / ramp)
        return max(float(k), start * (k / start) ** t)

    return cap


def finetune(net, mask, train, cfg):
    if cfg.finetune_epochs <= 0:
        return net.replace(weights=net.weights * mask)
    tuned, _ = nn.train(net.replace(weights=net.weights * mask), train.inputs, train.labels,
                        cfg.sgd(cfg.finetune_epochs, cfg.finetune_lr, 2), mask=mask)
    return tuned


def osp_baseline(dense, train, test, cfg, scores=None):
    """One-shot pruning at the criterion's top-k, then fine-tuning."""
    if scores is None:
        scores = criteria.scores(cfg.criterion, dense, train.inputs, train.labels, cfg.seed)
    mask = masks.threshold_topk(scores, cfg.sparsity)
    tuned = finetune(dense, mask, train, cfg)
    return mask, tuned, nn.eval_01(tuned, test.inputs, test.labels, mask)


def pft(train, test, cfg, net_init=None, dense=None):
    """Full pipeline; returns a dict with nets, masks, distribution and metrics.

    ``dense`` skips pretraining when a pretrained net is supplied.
    """
    t0 = time.time()
    pre_trace = []
    if dense is None:
        dense, pre_trace = pretrain(train, cfg, net_init)
    D = dense.n_weights
    if masks.keep_count(D, cfg.sparsity) == 0:
        raise ValueError(f"sparsity {cfg.sparsity} keeps no weights out of {D}")
    scores = criteria.scores(cfg.criterion, dense, train.inputs, train.labels, cfg.seed)
    osp_mask, osp_net, osp_err = osp_baseline(dense, train, test, cfg, scores)

    dist = init_distribution(scores, cfg)
    if cfg.sparsity == 0.0 or cfg.stage2_epochs <= 0:
        state_net, trained, stage2_trace = dense, dist, []
    else:
        scfg = StochasticConfig(epochs=cfg.stage2_epochs, lr=cfg.stage2_lr, mask_lr=cfg.mask_lr,
                                momentum=cfg.momentum, batch_size=cfg.batch_size,
                                train_weights=cfg.optimize_weights_in_stage2,
                                train_biases=cfg.optimize_weights_in_stage2,
                                per_example=cfg.per_example_masks, seed=cfg.seed + 1,
                                budget=budget_schedule(masks.keep_count(D, cfg.sparsity), cfg.stage2_epochs,
                                                       cfg.budget_free_epochs) if cfg.sparsity_budget else None)
        st = train_stochastic(dense, dist, train.inputs, train.labels, scfg)
        state_net, trained, stage2_trace = st.net, st.dist, st.trace
    # rank on raw parameters: same order as lam inside (0,1), and it still
    # separates entries that were clamped to 0 or 1
    hard = masks.threshold_topk(trained.raw, cfg.sparsity)
    sparse = finetune(state_net, hard, train, cfg)
    metrics = {
        "dense_test_err": nn.eval_01(dense, test.inputs, test.labels),
        "osp_test_err": osp_err,
        "pft_test_err": nn.eval_01(sparse, test.inputs, test.labels, hard),
        "overlap": masks.mask_overlap(osp_mask, hard) if cfg.sparsity < 1 else float("nan"),
        "entropy": masks.mask_entropy(trained),
        "kept": int(hard.sum()),
        "D": D,
        "wall_time": time.time() - t0,
    }
    return {
        "config": asdict(cfg), "dense_net": dense, "mask_distribution": trained,
        "hard_mask": hard, "sparse_net": sparse, "osp_mask": osp_mask, "osp_net": osp_net,
        "stage2_net": state_net, "metrics": metrics,
        "traces": {"pretrain": pre_trace, "stage2": stage2_trace},
    }
