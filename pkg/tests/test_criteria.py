import numpy as np
import pytest
from scipy import stats

from stochprune import criteria, nn


def test_magnitude():
    net = nn.DenseNet((3, 1), [-3.0, 1.0, 2.0], [0.0])
    np.testing.assert_array_equal(criteria.score_magnitude(net), [3, 1, 2])
    net = nn.DenseNet((2, 1), [0.0, -0.5], [0.0])
    assert criteria.score_magnitude(net)[0] == 0


def test_magnitude_order_matches_abs_weights(tiny_net):
    s = criteria.score_magnitude(tiny_net)
    np.testing.assert_array_equal(np.argsort(s, kind="stable"), np.argsort(np.abs(tiny_net.weights), kind="stable"))


def test_snip_single_linear_neuron():
    w, x, y = 1.5, 2.0, 0.5
    net = nn.DenseNet((1, 1), [w], [0.0], "identity")
    g = criteria.score_snip(net, np.array([[x]]), np.array([y]), loss="squared_error")
    assert g[0] == pytest.approx(abs(w * x * (w * x - y)))


def test_snip_zero_gradient_gives_zero_score():
    # dead hidden unit: its outgoing weight has zero gradient
    net = nn.DenseNet((1, 2, 2), [1.0, -1.0, 0.5, 0.3, 0.2, 0.4], [0, 0, 0, 0])
    s = criteria.score_snip(net, np.array([[1.0]]), np.array([0]))
    assert s[4] == 0 and s[5] == 0


def test_snip_matches_finite_differences(tiny_net, tiny_data):
    x, y = tiny_data
    s = criteria.score_snip(tiny_net, x, y)
    h = 1e-5
    fd = np.empty(tiny_net.n_weights)
    for i in range(fd.size):
        e = np.zeros(fd.size)
        e[i] = h
        fd[i] = (nn.eval_ce_clamped(tiny_net.replace(weights=tiny_net.weights + e), x, y) -
                 nn.eval_ce_clamped(tiny_net.replace(weights=tiny_net.weights - e), x, y)) / (2 * h)
    ref = np.abs(tiny_net.weights * fd)
    assert np.max(np.abs(s - ref) / np.maximum(ref, 1e-6)) < 1e-4
    assert np.all(s >= 0)


def test_snip_rejects_empty_and_non_finite(tiny_net):
    with pytest.raises(ValueError):
        criteria.score_snip(tiny_net, np.zeros((0, 4)), np.zeros(0, dtype=int))
    bad = tiny_net.replace(weights=np.full(tiny_net.n_weights, np.inf))
    with pytest.raises(FloatingPointError), np.errstate(all="ignore"):
        criteria.score_snip(bad, np.ones((2, 4)), np.array([0, 1]))


def test_random_scores():
    a, b = criteria.score_random(10_000, 7), criteria.score_random(10_000, 7)
    np.testing.assert_array_equal(a, b)
    assert np.unique(a).size == a.size
    assert stats.kstest(criteria.score_random(100_000, 1), "uniform").pvalue > 0.01


def test_dispatcher(tiny_net, tiny_data):
    for c in ("magnitude", "snip", "random"):
        s = criteria.scores(c, tiny_net, *tiny_data, seed=0)
        assert s.shape == (tiny_net.n_weights,) and np.all(np.isfinite(s))
    with pytest.raises(ValueError):
        criteria.scores("grasp", tiny_net)
