import numpy as np
import pytest

from stochprune import data, linear, nn
from stochprune.pipelines import oracle


def test_single_weight_gradient_is_loss_difference():
    net = nn.DenseNet((1, 1), [1.0], [0.0], "identity")
    x, y = np.array([[1.0]]), np.array([0.0])
    grad, risk = oracle.algorithm1_exact(net, x, y, np.array([0.5]), loss="squared_error")
    assert grad[0] == pytest.approx(0.5)
    assert risk == pytest.approx(0.25)


def test_exact_matches_linear_closed_form():
    inst = data.synth_linear(5, 5, 30, 30, noise_sigma=0.5, seed=3)
    g = np.random.default_rng(0)
    w, lam = g.normal(size=5), g.uniform(0.1, 0.9, 5)
    net = nn.DenseNet((5, 1), w, [0.0], "identity")
    grad, risk = oracle.algorithm1_exact(net, inst.Phi_P, inst.Y_P, lam, loss="squared_error")
    state = linear.GibbsLinearState(w, lam)
    np.testing.assert_allclose(grad, linear.gibbs_risk_grad_lambda(inst, state), atol=1e-10)
    assert risk == pytest.approx(linear.gibbs_risk_closed_form(inst, state), abs=1e-10)


def test_exact_rejects_large_nets():
    net = nn.init_dense((4, 4), 0)
    with pytest.raises(ValueError):
        oracle.algorithm1_exact(net, np.zeros((1, 4)), np.zeros(1, dtype=int), np.full(16, 0.5))


@pytest.fixture(scope="module")
def toy():
    net = nn.init_dense((3, 2, 2), 0)
    g = np.random.default_rng(0)
    x, y = g.standard_normal((20, 3)), g.integers(0, 2, 20)
    lam = g.uniform(0.2, 0.8, net.n_weights)
    return net, x, y, lam, oracle.algorithm1_exact(net, x, y, lam)[0]


def test_mc_error_shrinks_like_inverse_sqrt_m(toy):
    net, x, y, lam, exact = toy
    ms = [100, 400, 1600, 6400]
    errs = []
    for m in ms:
        runs = [oracle.algorithm1_mc(net, x, y, lam, m, seed=s)[0] for s in range(8)]
        errs.append(np.sqrt(np.mean((np.array(runs) - exact) ** 2)))
    assert linear.loglog_slope(ms, errs) == pytest.approx(-0.5, abs=0.15)


def test_mc_flags_degenerate_coordinates(toy):
    net, x, y, lam, _ = toy
    lam = lam.copy()
    lam[0], lam[1] = 0.0, 1.0
    grad, valid = oracle.algorithm1_mc(net, x, y, lam, 200)
    assert not valid[0] and not valid[1] and np.isnan(grad[:2]).all()
    assert valid[2:].all()


def test_gs_gradient_agrees_with_exact(toy):
    net, x, y, lam, exact = toy
    coarse = oracle.gs_gradient(net, x, y, lam, 0.5, 20000)
    assert np.mean(np.sign(coarse) == np.sign(exact)) >= 0.9
    fine = oracle.gs_gradient(net, x, y, lam, 0.1, 20000)
    assert np.corrcoef(fine, exact)[0, 1] >= 0.9


def test_gibbs_risk_exact_degenerate(toy):
    net, x, y, _, _ = toy
    ones = np.ones(net.n_weights)
    assert oracle.gibbs_risk_exact(net, x, y, ones) == pytest.approx(nn.eval_01(net, x, y))
    zeros = np.zeros(net.n_weights)
    assert oracle.gibbs_risk_exact(net, x, y, zeros) == pytest.approx(nn.eval_01(net, x, y, zeros))
