"""Stochastic pruning masks.

A mask distribution keeps weight ``i`` with probability ``lam[i]``.  The
trainable representation ``raw`` maps to ``lam`` either through a sigmoid
(``raw`` are logits) or through clamping to [0, 1] (``raw`` equals ``lam``
inside the open interval).
"""

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .rng import open_uniform

DEFAULT_BETA = 0.5
MODES = ("sigmoid", "clamp")


def map_probability(raw, mode):
    raw = np.asarray(raw, dtype=np.float64)
    if mode == "sigmoid":
        with np.errstate(over="ignore", invalid="ignore"):
            return np.where(raw >= 0, 1.0 / (1.0 + np.exp(-raw)), np.exp(raw) / (1.0 + np.exp(raw)))
    if mode == "clamp":
        return np.clip(raw, 0.0, 1.0)
    raise ValueError(f"unknown probability mode {mode!r}")


def map_probability_grad(raw, mode):
    """d lam / d raw."""
    raw = np.asarray(raw, dtype=np.float64)
    if mode == "sigmoid":
        lam = map_probability(raw, mode)
        return lam * (1.0 - lam)
    if mode == "clamp":
        return ((raw > 0.0) & (raw < 1.0)).astype(np.float64)
    raise ValueError(f"unknown probability mode {mode!r}")


def _logit(lam):
    lam = np.asarray(lam, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(lam) - np.log1p(-lam)


@dataclass
class MaskDistribution:
    raw: np.ndarray
    mode: str = "clamp"
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown probability mode {self.mode!r}")
        if not self.beta > 0:
            raise ValueError("temperature beta must be positive")
        self.raw = np.array(self.raw, dtype=np.float64)

    @classmethod
    def from_lambda(cls, lam, mode="clamp", beta=DEFAULT_BETA):
        lam = np.asarray(lam, dtype=np.float64)
        if np.any((lam < 0) | (lam > 1)):
            raise ValueError("keep probabilities must lie in [0, 1]")
        raw = _logit(lam) if mode == "sigmoid" else lam.copy()
        return cls(raw, mode, beta)

    @property
    def lam(self):
        return map_probability(self.raw, self.mode)

    @property
    def size(self):
        return self.raw.shape[0]

    def logits(self):
        """Log-odds of keeping each weight (+-inf for hard probabilities)."""
        return self.raw.copy() if self.mode == "sigmoid" else _logit(self.lam)

    def with_mode(self, mode):
        return MaskDistribution.from_lambda(self.lam, mode, self.beta)


def keep_count(D, s):
    """Number of weights kept at sparsity ``s`` (nearest integer)."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {s}")
    return int(round((1.0 - s) * D))


def init_isotropic(D, s, mode="clamp", beta=DEFAULT_BETA):
    keep_count(D, s)
    return MaskDistribution.from_lambda(np.full(D, 1.0 - s), mode, beta)


def top_k_indices(values, k):
    """Indices of the k largest values, ties to the lowest index."""
    order = np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")
    return order[:k]


def init_block_isotropic(scores, s, epsilon, mode="clamp", beta=DEFAULT_BETA):
    """Two-level keep probabilities around the top-k mask of ``scores``.

    The k highest scores get ``1 - s*eps/(1-s)``, the rest ``eps``; the
    expected sparsity is ``s`` whenever ``(1-s) D`` is an integer.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if s >= 1.0 or s * epsilon / (1.0 - s) >= 1.0:
        raise ValueError(f"block-isotropic init needs s*eps/(1-s) < 1 (s={s}, eps={epsilon})")
    k = keep_count(scores.shape[0], s)
    lam = np.full(scores.shape[0], epsilon)
    lam[top_k_indices(scores, k)] = 1.0 - s * epsilon / (1.0 - s)
    return MaskDistribution.from_lambda(lam, mode, beta)


def sample_bernoulli(dist, gen):
    lam = dist.lam if isinstance(dist, MaskDistribution) else np.asarray(dist)
    return (gen.random(lam.shape[0]) < lam).astype(np.float64)


def sample_concrete(dist, gen):
    """Relaxed mask in (0,1)^D and its derivative w.r.t. ``dist.raw``.

    Uses the logistic form of the two-category concrete distribution:
    ``x = sigmoid((logit(lam) + log u - log(1-u)) / beta)``.
    """
    u = open_uniform(gen, dist.size)
    x, dx_dlogit = kernels.concrete_relax(dist.logits(), u, dist.beta)
    if dist.mode == "sigmoid":
        return x, dx_dlogit
    lam = dist.lam
    inside = (lam > 0.0) & (lam < 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dx_draw = np.where(inside, dx_dlogit / (lam * (1.0 - lam)), 0.0)
    return x, dx_draw


def threshold_topk(dist, s):
    lam = dist.lam if isinstance(dist, MaskDistribution) else np.asarray(dist, dtype=np.float64)
    mask = np.zeros(lam.shape[0])
    mask[top_k_indices(lam, keep_count(lam.shape[0], s))] = 1.0
    return mask


def binary_entropy(p):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.where((p <= 0) | (p >= 1), 0.0, h)


def mask_entropy(dist):
    lam = dist.lam if isinstance(dist, MaskDistribution) else np.asarray(dist, dtype=np.float64)
    return float(np.mean(binary_entropy(lam)))


def mask_overlap(mask_a, mask_b):
    """Fraction of kept weights shared by two masks with equal keep counts."""
    a = np.asarray(mask_a) > 0.5
    b = np.asarray(mask_b) > 0.5
    k = int(a.sum())
    if k != int(b.sum()):
        raise ValueError(f"masks keep different numbers of weights ({k} vs {int(b.sum())})")
    if k == 0:
        raise ValueError("overlap is undefined for empty masks")
    return float(np.sum(a & b)) / k


# -- serialization ------------------------------------------------------------

def save_distribution(path, dist):
    header = {"mode": dist.mode, "beta": dist.beta, "D": dist.size}
    np.savez(path, lam=dist.lam, raw=dist.raw, header=np.array(json.dumps(header)))


def load_distribution(path):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        return MaskDistribution(z["raw"], header["mode"], header["beta"])


def pack_mask(mask):
    """Bit-pack a binary mask; the result starts with an 8-byte little-endian D."""
    bits = np.packbits((np.asarray(mask) > 0.5).astype(np.uint8))
    return np.array([len(mask)], dtype="<u8").tobytes() + bits.tobytes()


def unpack_mask(blob):
    D = int(np.frombuffer(blob[:8], dtype="<u8")[0])
    bits = np.unpackbits(np.frombuffer(blob[8:], dtype=np.uint8), count=D)
    return bits.astype(np.float64)


def project_budget(raw, mode, k, iters=100):
    """Shift ``raw`` by a scalar so the keep probabilities sum to ``k``.

    In clamp mode this is the Euclidean projection onto the capped simplex
    {lam in [0,1]^D : sum lam = k}; in sigmoid mode it shifts all logits.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if mode == "clamp":
        raw = np.clip(raw, 0.0, 1.0)
    lam = map_probability(raw, mode)
    total = lam.sum()
    if abs(total - k) <= 1e-9 * max(k, 1.0):
        return raw
    finite = raw[np.isfinite(raw)]
    pad = 40.0 if mode == "sigmoid" else 1.0
    # sum map(raw - tau) is decreasing in tau; bracket it and bisect
    lo_t, hi_t = float(finite.min()) - pad, float(finite.max()) + pad
    for _ in range(iters):
        mid = 0.5 * (lo_t + hi_t)
        if map_probability(raw - mid, mode).sum() > k:
            lo_t = mid
        else:
            hi_t = mid
    out = raw - 0.5 * (lo_t + hi_t)
    return np.clip(out, 0.0, 1.0) if mode == "clamp" else out
