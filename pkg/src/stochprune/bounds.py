"""PAC-Bayes bounds for spike-and-slab distributions over pruned weights.

All logarithms are natural.  The default confidence budget ``delta=0.05`` is
split between the bound itself and the Monte Carlo estimate of the empirical
Gibbs risk (``DELTA_BOUND + DELTA_MC``).
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .exceptions import InfiniteKLError

DELTA = 0.05
DELTA_BOUND = 0.04
DELTA_MC = 0.01


def kl_bernoulli(q, p):
    """Binary KL divergence kl(q||p); +inf when p is 0 or 1 and q differs."""
    return kernels.bernoulli_kl(q, p)


def kl_inverse(a, eps):
    """Largest p in [a, 1] with kl(a||p) <= eps, by bisection."""
    a = np.asarray(a, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if np.any((a < 0) | (a > 1)):
        raise ValueError("kl_inverse: a must lie in [0, 1]")
    if np.any(eps < 0):
        raise ValueError("kl_inverse: eps must be non-negative")
    return kernels.kl_inverse(a, eps)


@dataclass
class SpikeSlabDistribution:
    """Independent mixture (1-lam) * delta_0 + lam * N(mean, sigma^2) per weight."""

    lam: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray | float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=np.float64), self.lam.shape)
        if self.mean.shape != self.lam.shape:
            raise ValueError("lam and mean must have the same shape")
        if np.any((self.lam < 0) | (self.lam > 1)):
            raise ValueError("keep probabilities must lie in [0, 1]")
        if np.any((self.sigma <= 0) & (self.lam > 0)):
            raise ValueError("slab std must be positive wherever lam > 0")

    @property
    def size(self):
        return self.lam.shape[0]

    def sample(self, gen, n=None):
        """Draw weight vectors: mask times (mean + sigma * noise)."""
        shape = self.lam.shape if n is None else (n,) + self.lam.shape
        keep = gen.random(shape) < self.lam
        return np.where(keep, self.mean + self.sigma * gen.standard_normal(shape), 0.0)


def kl_spike_slab(Q, P):
    """Total KL(Q||P) and the per-weight terms."""
    bad = ((P.lam <= 0) & (Q.lam > 0)) | ((P.lam >= 1) & (Q.lam < 1))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise InfiniteKLError(f"posterior keep probability {Q.lam[i]} at weight {i} "
                              f"is outside the support of the prior ({P.lam[i]})")
    terms, _, _ = kernels.spike_slab_kl(Q.lam, P.lam, Q.mean - P.mean, Q.sigma ** 2, P.sigma ** 2)
    # weights with lam = 0 have no slab and contribute only the Bernoulli part
    return float(np.sum(terms)), terms


def kl_spike_slab_grad(Q, P):
    """Partial derivatives of the total KL w.r.t. Q.lam and Q.mean."""
    _, d_lam, d_mean = kernels.spike_slab_kl(Q.lam, P.lam, Q.mean - P.mean, Q.sigma ** 2, P.sigma ** 2)
    return d_lam, d_mean


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def epsilon_data_dependent(kl_total, alpha, n_total, delta=DELTA_BOUND, penalty=0.0):
    """Complexity term of the data-dependent bound.

    ``n_bound = (1 - alpha) * n_total`` examples are held out from the prior.
    ``penalty`` is an extra additive term in the numerator, e.g. ln(grid size).
    """
    _check_delta(delta)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    n = (1.0 - alpha) * n_total
    if n < 1:
        raise ValueError("the bound set must hold at least one example")
    return (kl_total + penalty + math.log(2.0 * math.sqrt(n) / delta)) / n


def bound_thm1(emp_gibbs, eps):
    """Returns ``(bound clipped to [0, 1], branch, unclipped bound)``.

    ``branch`` is ``"fast"`` for eps + sqrt(eps (eps + 2 emp)) and ``"slow"``
    for sqrt(eps / 2).
    """
    if not 0.0 <= emp_gibbs <= 1.0:
        raise ValueError("empirical Gibbs risk must lie in [0, 1]")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    fast = eps + math.sqrt(eps * (eps + 2.0 * emp_gibbs))
    slow = math.sqrt(eps / 2.0)
    branch = "fast" if fast <= slow else "slow"
    raw = emp_gibbs + min(fast, slow)
    return min(max(raw, 0.0), 1.0), branch, raw


def bound_thm1_grad(emp_gibbs, eps):
    """(d bound / d emp, d bound / d eps) on the active branch."""
    fast = eps + math.sqrt(eps * (eps + 2.0 * emp_gibbs))
    slow = math.sqrt(eps / 2.0)
    if fast <= slow:
        root = math.sqrt(max(eps * (eps + 2.0 * emp_gibbs), 1e-300))
        return 1.0 + eps / root, 1.0 + (eps + emp_gibbs) / root
    return 1.0, 0.25 / max(slow, 1e-300)


def bound_thm2(emp_gibbs, kl_total, N, delta=DELTA_BOUND):
    """kl-inverse form of the bound with N held-out examples."""
    _check_delta(delta)
    rate = (kl_total + math.log(2.0 * math.sqrt(N) / delta)) / N
    return float(kl_inverse(emp_gibbs, rate))


def catoni_linear_objective(emp_gibbs, kl_total, n, zeta):
    return emp_gibbs + (zeta / n) * kl_total


def chernoff_gibbs_ci(mc_losses, delta_prime=DELTA_MC):
    """Upper confidence bound on the Gibbs risk from m sampled predictors.

    Each entry of ``mc_losses`` is the average 0-1 loss of one draw.
    """
    _check_delta(delta_prime)
    losses = np.asarray(mc_losses, dtype=np.float64)
    m = losses.shape[0]
    if m < 1:
        raise ValueError("need at least one Monte Carlo sample")
    mean = float(np.clip(losses.mean(), 0.0, 1.0))
    return float(kl_inverse(mean, math.log(2.0 / delta_prime) / m))


@dataclass
class BoundReport:
    emp_gibbs_mean: float
    emp_gibbs_01: float
    kl_total: float
    alpha: float
    n_total: int
    n_bound: float
    delta: float
    delta_bound: float
    delta_mc: float
    mc_samples: int
    grid_penalty: float
    epsilon: float
    bound: float
    bound_unclipped: float
    branch: str
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def certify(mc_losses, kl_total, alpha, n_total, delta=DELTA, delta_mc=DELTA_MC, grid_size=1):
    """Assemble a certificate from Monte Carlo 0-1 losses on the bound set."""
    _check_delta(delta)
    if not 0.0 < delta_mc < delta:
        raise ValueError("Monte Carlo share of delta must lie in (0, delta)")
    delta_bound = delta - delta_mc
    losses = np.asarray(mc_losses, dtype=np.float64)
    upper = chernoff_gibbs_ci(losses, delta_mc)
    penalty = math.log(grid_size) if grid_size > 1 else 0.0
    eps = epsilon_data_dependent(kl_total, alpha, n_total, delta_bound, penalty)
    bound, branch, raw = bound_thm1(upper, eps)
    return BoundReport(
        emp_gibbs_mean=float(losses.mean()), emp_gibbs_01=upper, kl_total=float(kl_total),
        alpha=float(alpha), n_total=int(n_total), n_bound=(1.0 - alpha) * n_total,
        delta=float(delta), delta_bound=delta_bound, delta_mc=float(delta_mc),
        mc_samples=int(losses.shape[0]), grid_penalty=penalty, epsilon=eps,
        bound=bound, bound_unclipped=raw, branch=branch,
    )
