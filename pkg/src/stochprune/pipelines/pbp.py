"""Self-bounded pruning with a data-dependent spike-and-slab prior.

Stage 1 pretrains on the prior split S_P, stage 2 fits a stochastic prior
(keep probabilities, slab means) on S_P, and stage 3 trains the posterior on
the held-out split by minimizing the bound with a surrogate loss.  The
certificate is always recomputed on the 0-1 loss with a Monte Carlo estimate
of the Gibbs risk.
"""

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .. import bounds, criteria, kernels, masks, nn
from ..bounds import SpikeSlabDistribution
from ..data import AuditedSplit, split
from ..exceptions import ConfigError
from ..masks import MaskDistribution, map_probability_grad
from .common import StochasticConfig, gibbs_01, train_stochastic
from .pft import PftConfig, architecture

LAMBDA_FLOOR = 1e-4


@dataclass
class PbpConfig(PftConfig):
    alpha: float = 0.6
    sigma2: float = math.exp(-9.0)
    sigma2_grid: tuple = ()
    stage2_mask_lr: float = 0.01
    stage3_epochs: int = 10
    stage3_lr: float = 0.01
    stage3_mask_lr: float = 0.01
    train_posterior_lambda: bool = True
    train_posterior_weights: bool = True
    delta: float = bounds.DELTA
    delta_mc: float = bounds.DELTA_MC
    mc_samples: int = 1000
    kl_downweight: float = 1.0
    test_gibbs_samples: int = 100

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1) for bound training, got {self.alpha}")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        if not 0.0 < self.delta_mc < self.delta < 1.0:
            raise ConfigError("need 0 < delta_mc < delta < 1")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be positive")
        self.sigma2_grid = tuple(float(v) for v in self.sigma2_grid)


def kl_penalty(prior, n_bound, delta_bound, downweight, grid_penalty, mode):
    """Penalty callback turning the stochastic trainer into a bound minimizer.

    Uses the surrogate empirical risk ``CE / ln(1e4)`` in [0, 1].  A running
    average of the batch surrogate picks the active branch and the chain
    coefficients of the bound.
    """
    lam0, w0 = prior.lam, prior.mean
    s2 = prior.sigma ** 2
    const = math.log(2.0 * math.sqrt(n_bound) / delta_bound) + grid_penalty
    state = {"emp": None}

    def penalty(raw, w, batch_loss):
        emp = min(batch_loss / nn.CE_MAX, 1.0)
        state["emp"] = emp if state["emp"] is None else 0.9 * state["emp"] + 0.1 * emp
        lam = masks.map_probability(raw, mode)
        terms, d_lam, d_mean = kernels.spike_slab_kl(lam, lam0, w - w0, s2, s2)
        kl = float(terms.sum())
        eps = (downweight * kl + const) / n_bound
        c_emp, c_eps = bounds.bound_thm1_grad(state["emp"], eps)
        bound, _, _ = bounds.bound_thm1(emp, eps)
        scale = c_emp / nn.CE_MAX
        coef = c_eps * downweight / n_bound
        g_raw = coef * np.nan_to_num(d_lam) * map_probability_grad(raw, mode)
        g_w = coef * d_mean
        # the objective value reported is the bound itself
        return bound - scale * batch_loss, scale, g_raw, g_w

    return penalty


def fit_prior(prior_data, cfg, net_init=None, n_classes=None):
    """Stages 1 and 2 on the prior split only."""
    pre_cfg = cfg.sgd(cfg.pretrain_epochs, cfg.pretrain_lr, 0)
    net = net_init or nn.init_dense(architecture(prior_data.inputs.shape[1], n_classes, cfg.hidden), cfg.seed)
    pre_trace = []
    if cfg.pretrain_epochs > 0:
        net, pre_trace = nn.train(net, prior_data.inputs, prior_data.labels, pre_cfg)
    scores = criteria.scores(cfg.criterion, net, prior_data.inputs, prior_data.labels, cfg.seed)
    if cfg.init_scheme == "isotropic":
        dist = masks.init_isotropic(net.n_weights, cfg.sparsity, "sigmoid", cfg.beta)
    else:
        dist = masks.init_block_isotropic(scores, cfg.sparsity, cfg.epsilon, "sigmoid", cfg.beta)
    stage2_trace = []
    if cfg.stage2_epochs > 0:
        scfg = StochasticConfig(epochs=cfg.stage2_epochs, lr=cfg.stage2_lr, mask_lr=cfg.stage2_mask_lr,
                                momentum=cfg.momentum, batch_size=cfg.batch_size,
                                train_weights=cfg.optimize_weights_in_stage2,
                                train_biases=cfg.optimize_weights_in_stage2,
                                sigma=math.sqrt(cfg.sigma2), per_example=cfg.per_example_masks,
                                seed=cfg.seed + 1)
        st = train_stochastic(net, dist, prior_data.inputs, prior_data.labels, scfg)
        net, dist, stage2_trace = st.net, st.dist, st.trace
    lam0 = np.clip(dist.lam, LAMBDA_FLOOR, 1.0 - LAMBDA_FLOOR)
    prior = SpikeSlabDistribution(lam0, net.weights.copy(), math.sqrt(cfg.sigma2))
    return net, prior, {"pretrain": pre_trace, "stage2": stage2_trace}


def fit_posterior(net, prior, bound_data, n_total, cfg, grid_size=1):
    """Stage 3: minimize the bound over posterior keep probabilities and means."""
    n_bound = (1.0 - cfg.alpha) * n_total
    grid_penalty = math.log(grid_size) if grid_size > 1 else 0.0
    mode = "sigmoid"
    dist = MaskDistribution.from_lambda(prior.lam, mode, cfg.beta)
    if cfg.stage3_epochs <= 0 or not (cfg.train_posterior_lambda or cfg.train_posterior_weights):
        return net, SpikeSlabDistribution(prior.lam.copy(), prior.mean.copy(), prior.sigma), []
    pen = kl_penalty(prior, n_bound, cfg.delta - cfg.delta_mc, cfg.kl_downweight, grid_penalty, mode)
    scfg = StochasticConfig(epochs=cfg.stage3_epochs, lr=cfg.stage3_lr, mask_lr=cfg.stage3_mask_lr,
                            momentum=cfg.momentum, batch_size=cfg.batch_size,
                            train_weights=cfg.train_posterior_weights, train_biases=False,
                            train_mask=cfg.train_posterior_lambda, sigma=float(prior.sigma[0]),
                            per_example=cfg.per_example_masks, seed=cfg.seed + 3)
    st = train_stochastic(net, dist, bound_data.inputs, bound_data.labels, scfg, penalty=pen)
    posterior = SpikeSlabDistribution(st.dist.lam, st.net.weights.copy(), prior.sigma)
    return st.net, posterior, st.trace


def certificate(net, posterior, prior, bound_data, n_total, cfg, grid_size=1):
    kl_total, _ = bounds.kl_spike_slab(posterior, prior)
    losses = gibbs_01(net, bound_data.inputs, bound_data.labels, posterior.lam, posterior.mean,
                      posterior.sigma, cfg.mc_samples, cfg.seed, "certificate")
    return bounds.certify(losses, kl_total, cfg.alpha, n_total, cfg.delta, cfg.delta_mc, grid_size)


def gibbs_test_error(net, dist, test, m, seed):
    return float(np.mean(gibbs_01(net, test.inputs, test.labels, dist.lam, dist.mean, dist.sigma, m, seed, "test")))


def pbp(train, test, cfg, net_init=None):
    """Three-stage pipeline; returns prior, posterior, BoundReport and metrics."""
    t0 = time.time()
    spec = split(train, cfg.alpha, cfg.seed)
    audited = AuditedSplit(train, spec)
    n_total = len(train)
    n_classes = train.n_classes
    grid = cfg.sigma2_grid or (cfg.sigma2,)
    best = None
    for sigma2 in grid:
        run_cfg = PbpConfig(**{**asdict(cfg), "sigma2": sigma2, "sigma2_grid": ()})
        audited.lock()
        net, prior, traces = fit_prior(audited.prior("stage1-2"), run_cfg, net_init, n_classes)
        audited.unlock()
        bound_data = audited.bound("stage3")
        net_q, posterior, stage3_trace = fit_posterior(net, prior, bound_data, n_total, run_cfg, len(grid))
        report = certificate(net_q, posterior, prior, bound_data, n_total, run_cfg, len(grid))
        traces["stage3"] = stage3_trace
        if best is None or report.bound < best[3].bound:
            best = (net_q, prior, posterior, report, traces, sigma2, net)
    net_q, prior, posterior, report, traces, sigma2, net_p = best
    report.extra = {"sigma2": sigma2, "grid": list(grid), "kl_downweight": cfg.kl_downweight}
    metrics = {
        "bound": report.bound,
        "kl": report.kl_total,
        "posterior_gibbs_test_err": gibbs_test_error(net_q, posterior, test, cfg.test_gibbs_samples, cfg.seed),
        "prior_gibbs_test_err": gibbs_test_error(net_p, prior, test, cfg.test_gibbs_samples, cfg.seed),
        "posterior_mean_test_err": nn.eval_01(net_q.replace(weights=posterior.mean), test.inputs, test.labels,
                                              masks.threshold_topk(posterior.lam, cfg.sparsity)),
        "entropy": masks.mask_entropy(posterior.lam),
        "wall_time": time.time() - t0,
    }
    return {"config": asdict(cfg), "split": spec, "prior": prior, "posterior": posterior,
            "prior_net": net_p, "posterior_net": net_q, "bound_report": report,
            "metrics": metrics, "traces": traces, "access_log": list(audited.log)}
