"""One-shot pruning scores: magnitude, SNIP sensitivity and random."""

import numpy as np

from .nn import Batch, backward
from .rng import substream


def score_magnitude(net):
    return np.abs(net.weights)


def score_snip(net, inputs, labels, loss="cross_entropy_clamped"):
    """|w * dL/dw| for the mean loss over the whole scoring set, full mask."""
    inputs = np.asarray(inputs)
    if inputs.shape[0] == 0:
        raise ValueError("SNIP needs a non-empty scoring batch")
    grads = backward(net, Batch(inputs, labels), None, loss)
    if not np.all(np.isfinite(grads.weights)):
        raise FloatingPointError("non-finite gradient while computing SNIP scores")
    return np.abs(net.weights * grads.weights)


def score_random(D, seed):
    return substream(seed, 0, "random-scores").random(D)


def scores(criterion, net, inputs=None, labels=None, seed=0):
    if criterion == "magnitude":
        return score_magnitude(net)
    if criterion == "snip":
        return score_snip(net, inputs, labels)
    if criterion == "random":
        return score_random(net.n_weights, seed)
    raise ValueError(f"unknown criterion {criterion!r}")
