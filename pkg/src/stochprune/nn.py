"""Minimal dense MLP engine: forward pass, manual backprop, SGD with momentum.

Parameters live in two flat float64 vectors.  The weight vector has length D
and is the object every mask and distribution in the package is indexed by:
layer ``l`` occupies a contiguous block holding its ``(fan_in, fan_out)``
matrix in row-major order, layers in order.  Biases are stored separately and
are never masked.
"""

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import DivergenceError, NonFiniteLossError, ShapeError
from .rng import substream

PROB_FLOOR = 1e-4
CE_MAX = math.log(1.0 / PROB_FLOOR)
ACTIVATIONS = ("relu", "identity")
LOSSES = ("cross_entropy_clamped", "squared_error")
EVAL_CHUNK = 8192


@dataclass(frozen=True)
class DenseNet:
    layer_dims: tuple
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ShapeError(f"layer_dims must hold >= 2 positive ints, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_dims", dims)
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        n_w = sum(a * c for a, c in zip(dims[:-1], dims[1:]))
        n_b = sum(dims[1:])
        if w.shape != (n_w,) or b.shape != (n_b,):
            raise ShapeError(f"expected {n_w} weights and {n_b} biases, got {w.shape} and {b.shape}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def n_weights(self):
        return self.weights.shape[0]

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    def weight_blocks(self):
        """``(start, stop, (fan_in, fan_out))`` for each layer's weight block."""
        out, start = [], 0
        for a, c in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            out.append((start, start + a * c, (a, c)))
            start += a * c
        return out

    def bias_blocks(self):
        out, start = [], 0
        for c in self.layer_dims[1:]:
            out.append((start, start + c))
            start += c
        return out

    def matrices(self, flat=None):
        flat = self.weights if flat is None else flat
        return [flat[s:e].reshape(shape) for s, e, shape in self.weight_blocks()]

    def bias_vectors(self, flat=None):
        flat = self.biases if flat is None else flat
        return [flat[s:e] for s, e in self.bias_blocks()]

    def flat_index(self, layer, row, col):
        """Flat weight index of ``matrices()[layer][row, col]``."""
        start, _, (_, fan_out) = self.weight_blocks()[layer]
        return start + row * fan_out + col

    def replace(self, weights=None, biases=None):
        return DenseNet(
            self.layer_dims,
            self.weights.copy() if weights is None else np.array(weights, dtype=np.float64),
            self.biases.copy() if biases is None else np.array(biases, dtype=np.float64),
            self.activation,
        )


class Batch(NamedTuple):
    inputs: np.ndarray
    labels: np.ndarray


@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class Gradients:
    loss: float
    weights: np.ndarray
    biases: np.ndarray
    per_sample: np.ndarray = field(repr=False, default=None)


def init_dense(layer_dims, seed=0, activation="relu"):
    """He-style fan-in scaled uniform weights, zero biases."""
    probe = DenseNet(layer_dims, np.zeros(sum(a * c for a, c in zip(layer_dims[:-1], layer_dims[1:]))),
                     np.zeros(sum(layer_dims[1:])), activation)
    gen = substream(seed, 0, "init")
    w = np.empty(probe.n_weights)
    for s, e, (fan_in, _) in probe.weight_blocks():
        bound = math.sqrt(6.0 / fan_in)
        w[s:e] = gen.uniform(-bound, bound, e - s)
    return probe.replace(weights=w)


def _check_inputs(net, x, mask):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise ShapeError(f"inputs must be (n, {net.layer_dims[0]}), got {x.shape}")
    if mask is not None and np.shape(mask) != (net.n_weights,):
        raise ShapeError(f"mask must have length {net.n_weights}, got {np.shape(mask)}")
    return x


def _effective(net, mask):
    return net.weights if mask is None else net.weights * mask


def _trace(net, x, w_eff, b_flat=None):
    acts = [x]
    mats = net.matrices(w_eff)
    bs = net.bias_vectors(b_flat)
    h = x
    for layer, (W, b) in enumerate(zip(mats, bs)):
        h = h @ W + b
        if layer < len(mats) - 1 and net.activation == "relu":
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward(net, inputs, mask=None):
    """Logits of the network with weights multiplied elementwise by ``mask``."""
    x = _check_inputs(net, inputs, mask)
    return _trace(net, x, _effective(net, mask))[-1]


def _loss_head(out, labels, loss):
    """Per-sample losses and d(loss)/d(out), unscaled by batch size."""
    if loss == "cross_entropy_clamped":
        labels = np.asarray(labels, dtype=np.int64)
        z = out - out.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
        logp = z - logsum
        rows = np.arange(out.shape[0])
        lp_true = logp[rows, labels]
        clamped = lp_true < math.log(PROB_FLOOR)
        per = -np.maximum(lp_true, math.log(PROB_FLOOR))
        g = np.exp(logp)
        g[rows, labels] -= 1.0
        g[clamped] = 0.0
        return per, g
    if loss == "squared_error":
        target = np.asarray(labels, dtype=np.float64).reshape(out.shape[0], -1)
        r = out - target
        return 0.5 * np.sum(r * r, axis=1), r
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")


def loss_and_grad(net, inputs, labels, w_eff, loss="cross_entropy_clamped", b_flat=None):
    """Mean loss with gradients w.r.t. the *effective* weights and the biases.

    ``b_flat`` overrides the network's biases (used by training loops).
    """
    acts = _trace(net, inputs, w_eff, b_flat)
    per, g = _loss_head(acts[-1], labels, loss)
    bad = ~np.isfinite(per)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteLossError(i, float(per[i]))
    n = inputs.shape[0]
    g = g / n
    mats = net.matrices(w_eff)
    gw = np.empty(net.n_weights)
    gb = np.empty(net.biases.shape[0])
    wblocks = net.weight_blocks()
    bblocks = net.bias_blocks()
    for layer in range(net.n_layers - 1, -1, -1):
        s, e, shape = wblocks[layer]
        gw[s:e] = (acts[layer].T @ g).ravel()
        bs, be = bblocks[layer]
        gb[bs:be] = g.sum(axis=0)
        if layer:
            g = g @ mats[layer].T
            if net.activation == "relu":
                g = g * (acts[layer] > 0)
    return float(per.mean()), gw, gb, per


def backward(net, batch, mask=None, loss="cross_entropy_clamped"):
    """Gradient of the mean batch loss w.r.t. the underlying weights.

    With a mask the gradient is the one of the masked loss, hence scaled by
    the mask and zero at pruned weights.
    """
    x = _check_inputs(net, batch.inputs, mask)
    if len(batch.labels) != x.shape[0]:
        raise ShapeError("inputs and labels have different row counts")
    value, gw, gb, per = loss_and_grad(net, x, batch.labels, _effective(net, mask), loss)
    if mask is not None:
        gw = gw * mask
    return Gradients(value, gw, gb, per)


def train(net, inputs, labels, cfg, mask=None, loss="cross_entropy_clamped"):
    """SGD with momentum. Returns the trained copy and the per-epoch mean loss."""
    x = _check_inputs(net, inputs, mask)
    labels = np.asarray(labels)
    n = x.shape[0]
    w, b = net.weights.copy(), net.biases.copy()
    vw, vb = np.zeros_like(w), np.zeros_like(b)
    trace = []
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, epoch, "shuffle").permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            w_eff = w if mask is None else w * mask
            try:
                value, gw, gb, _ = loss_and_grad(net, x[idx], labels[idx], w_eff, loss, b)
            except NonFiniteLossError as exc:
                raise DivergenceError(epoch, exc.value) from exc
            if mask is not None:
                gw *= mask
            vw = cfg.momentum * vw + gw
            vb = cfg.momentum * vb + gb
            w = w - cfg.learning_rate * vw
            b = b - cfg.learning_rate * vb
            total += value * len(idx)
        epoch_loss = total / n
        if not (math.isfinite(epoch_loss) and np.isfinite(w).all()):
            raise DivergenceError(epoch, epoch_loss)
        trace.append(epoch_loss)
    return net.replace(weights=w, biases=b), trace


def _chunks(n):
    for s in range(0, n, EVAL_CHUNK):
        yield slice(s, min(n, s + EVAL_CHUNK))


def eval_01(net, inputs, labels, mask=None):
    x = _check_inputs(net, inputs, mask)
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    labels = np.asarray(labels)
    w_eff = _effective(net, mask)
    wrong = 0
    for sl in _chunks(x.shape[0]):
        wrong += int(np.sum(_trace(net, x[sl], w_eff)[-1].argmax(axis=1) != labels[sl]))
    return wrong / x.shape[0]


def eval_ce_clamped(net, inputs, labels, mask=None, normalized=False):
    """Mean cross-entropy with true-class probability clamped below at 1e-4."""
    x = _check_inputs(net, inputs, mask)
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    labels = np.asarray(labels)
    w_eff = _effective(net, mask)
    total = 0.0
    for sl in _chunks(x.shape[0]):
        per, _ = _loss_head(_trace(net, x[sl], w_eff)[-1], labels[sl], "cross_entropy_clamped")
        total += per.sum()
    value = total / x.shape[0]
    return value / CE_MAX if normalized else value


# -- batched evaluation over many weight vectors (small nets only) ---------

def _trace_many(net, x, w_stack):
    acts = [x]
    h = np.broadcast_to(x, (w_stack.shape[0],) + x.shape)
    blocks = net.weight_blocks()
    bs = net.bias_vectors()
    for layer, ((s, e, shape), b) in enumerate(zip(blocks, bs)):
        W = w_stack[:, s:e].reshape((w_stack.shape[0],) + shape)
        h = np.einsum("sni,sio->sno", h, W) + b
        if layer < len(blocks) - 1 and net.activation == "relu":
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def losses_many(net, inputs, labels, w_stack, loss="cross_entropy_clamped"):
    """Mean loss for each row of ``w_stack`` (shape ``(S, D)``)."""
    x = np.asarray(inputs, dtype=np.float64)
    out = _trace_many(net, x, w_stack)[-1]
    S, n, k = out.shape
    per, _ = _loss_head(out.reshape(S * n, k), np.tile(np.asarray(labels), S), loss)
    return per.reshape(S, n).mean(axis=1)


def loss_and_grad_many(net, inputs, labels, w_stack, loss="cross_entropy_clamped"):
    """Per-row mean losses and gradients w.r.t. each row of ``w_stack``."""
    x = np.asarray(inputs, dtype=np.float64)
    acts = _trace_many(net, x, w_stack)
    S, n, k = acts[-1].shape
    per, g = _loss_head(acts[-1].reshape(S * n, k), np.tile(np.asarray(labels), S), loss)
    g = g.reshape(S, n, k) / n
    grads = np.empty_like(w_stack)
    blocks = net.weight_blocks()
    for layer in range(net.n_layers - 1, -1, -1):
        s, e, shape = blocks[layer]
        a = acts[layer] if acts[layer].ndim == 3 else np.broadcast_to(acts[layer], (S,) + acts[layer].shape)
        grads[:, s:e] = np.einsum("sni,sno->sio", a, g).reshape(S, -1)
        if layer:
            W = w_stack[:, s:e].reshape((S,) + shape)
            g = np.einsum("sno,sio->sni", g, W)
            if net.activation == "relu":
                g = g * (acts[layer] > 0)
    return per.reshape(S, n).mean(axis=1), grads


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, net, seed=None, config=None):
    """Write an ``.npz`` holding dims, flat weights (documented order), seed, config."""
    meta = {"layer_dims": list(net.layer_dims), "activation": net.activation,
            "weight_order": "layer-major, row-major (fan_in, fan_out)",
            "seed": seed, "config": config or {}}
    np.savez(path, weights=net.weights, biases=net.biases, meta=np.array(json.dumps(meta, default=str)))


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        net = DenseNet(tuple(meta["layer_dims"]), z["weights"], z["biases"], meta["activation"])
    return net, meta
