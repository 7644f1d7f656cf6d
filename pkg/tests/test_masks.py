import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from stochprune import masks
from stochprune.masks import MaskDistribution
from stochprune.rng import substream


def gen(seed=0):
    return substream(seed, 0, "test")


def test_init_isotropic():
    np.testing.assert_array_equal(masks.init_isotropic(4, 0.75).lam, [0.25] * 4)
    np.testing.assert_array_equal(masks.init_isotropic(3, 0.0).lam, np.ones(3))
    np.testing.assert_array_equal(masks.init_isotropic(3, 1.0).lam, np.zeros(3))


def test_init_block_isotropic_examples():
    d = masks.init_block_isotropic([4, 3, 2, 1], 0.5, 1e-4)
    np.testing.assert_allclose(d.lam, [0.9999, 0.9999, 0.0001, 0.0001])
    d = masks.init_block_isotropic(np.arange(10.0), 0.9, 0.01)
    np.testing.assert_allclose(np.sort(d.lam)[::-1], [0.91] + [0.01] * 9)
    assert d.lam[9] == pytest.approx(0.91)
    assert np.mean(1 - d.lam) == pytest.approx(0.9)


def test_init_block_isotropic_precondition():
    with pytest.raises(ValueError, match="s\\*eps/\\(1-s\\) < 1"):
        masks.init_block_isotropic(np.arange(10.0), 0.9, 0.2)


@given(st.integers(2, 300), st.floats(0.0, 0.99), st.floats(1e-5, 0.05))
def test_block_isotropic_expected_sparsity(D, s, eps):
    if s * eps / (1 - s) >= 1:
        return
    k = masks.keep_count(D, s)
    d = masks.init_block_isotropic(np.random.default_rng(0).random(D), s, eps)
    # exact when k = (1-s) D; otherwise off by the rounding of k
    expected = s + ((1 - s) * D - k) * (1 - s * eps / (1 - s) - eps) / D
    assert np.mean(1 - d.lam) == pytest.approx(expected, abs=1e-12)
    assert abs(np.mean(1 - d.lam) - s) <= 1.0 / D + 1e-12


def test_block_isotropic_ties_go_to_lowest_index():
    d = masks.init_block_isotropic(np.ones(4), 0.5, 0.01)
    assert list(d.lam > 0.5) == [True, True, False, False]


def test_sample_bernoulli_extremes_and_frequency():
    d = MaskDistribution.from_lambda([1.0, 0.0])
    for s in range(20):
        np.testing.assert_array_equal(masks.sample_bernoulli(d, gen(s)), [1.0, 0.0])
    big = MaskDistribution.from_lambda(np.full(100_000, 0.3))
    assert abs(masks.sample_bernoulli(big, gen()).mean() - 0.3) < 0.01


def test_concrete_low_temperature_matches_bernoulli():
    d = MaskDistribution.from_lambda(np.full(100_000, 0.7), "clamp", 0.01)
    x, _ = masks.sample_concrete(d, gen())
    assert abs(np.mean(x > 0.5) - 0.7) < 0.01


def test_concrete_symmetric_at_half():
    d = MaskDistribution.from_lambda(np.full(100_000, 0.5))
    x, _ = masks.sample_concrete(d, gen(1))
    assert abs(np.median(x) - 0.5) < 0.01
    assert abs(np.mean(x) - 0.5) < 0.005


def test_concrete_mean_matches_quadrature():
    lam, beta = 0.2, 0.5
    a = math.log(lam / (1 - lam))

    # logistic noise density times the relaxed value
    def integrand(l):
        return special.expit((a + l) / beta) * math.exp(-l) / (1 + math.exp(-l)) ** 2

    ref, _ = integrate.quad(integrand, -60, 60, epsabs=1e-12, limit=400)
    d = MaskDistribution.from_lambda(np.full(100_000, lam), "clamp", beta)
    x, _ = masks.sample_concrete(d, gen(2))
    assert abs(x.mean() - ref) < 0.005


def test_concrete_hard_probabilities_short_circuit():
    d = MaskDistribution.from_lambda([0.0, 1.0, 0.5], "clamp")
    x, dx = masks.sample_concrete(d, gen())
    assert x[0] == 0.0 and x[1] == 1.0
    assert dx[0] == 0.0 and dx[1] == 0.0
    assert np.all(np.isfinite(x))


def test_concrete_converges_to_bernoulli_as_temperature_drops():
    # hard-thresholding is exactly Bernoulli(lam) in the logistic form, so
    # convergence is measured with the W1 distance of the soft values
    lam = np.full(100_000, 0.3)
    dists = []
    for beta in (0.5, 0.1, 0.01):
        x, _ = masks.sample_concrete(MaskDistribution.from_lambda(lam, "clamp", beta), gen(3))
        dists.append(np.mean(np.minimum(x, 1 - x)))
    assert dists[0] > dists[1] > dists[2]


@pytest.mark.parametrize("mode", ["sigmoid", "clamp"])
def test_concrete_pathwise_derivative(mode):
    lam = np.array([0.2, 0.5, 0.8])
    d = MaskDistribution.from_lambda(lam, mode, 0.5)
    _, dx = masks.sample_concrete(d, gen(4))
    h = 1e-6
    up, _ = masks.sample_concrete(MaskDistribution(d.raw + h, mode, 0.5), gen(4))
    dn, _ = masks.sample_concrete(MaskDistribution(d.raw - h, mode, 0.5), gen(4))
    np.testing.assert_allclose(dx, (up - dn) / (2 * h), rtol=1e-6)


def test_threshold_topk_examples():
    np.testing.assert_array_equal(masks.threshold_topk(np.array([0.9, 0.1, 0.8, 0.2]), 0.5), [1, 0, 1, 0])
    np.testing.assert_array_equal(masks.threshold_topk(np.full(4, 0.3), 0.5), [1, 1, 0, 0])


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=200), st.floats(0, 1))
def test_threshold_topk_properties(codes, s):
    lam = np.array(codes) / 1000.0
    m = masks.threshold_topk(lam, s)
    k = masks.keep_count(lam.size, s)
    assert m.sum() == k
    if 0 < k < lam.size:
        assert lam[m == 1].min() >= lam[m == 0].max()
    # invariant under strictly increasing maps
    np.testing.assert_array_equal(masks.threshold_topk(np.exp(3 * lam) - 7, s), m)


def test_map_probability():
    assert masks.map_probability(0.0, "sigmoid") == 0.5
    assert masks.map_probability(1.7, "clamp") == 1.0
    assert masks.map_probability_grad(1.7, "clamp") == 0.0
    assert masks.map_probability_grad(2.0, "sigmoid") == pytest.approx(0.104993585, abs=1e-9)


@given(st.floats(-700, 700))
def test_map_probability_range_and_gradient(raw):
    for mode in ("sigmoid", "clamp"):
        assert 0.0 <= masks.map_probability(raw, mode) <= 1.0
    if abs(raw) < 30:
        h = 1e-6
        fd = (masks.map_probability(raw + h, "sigmoid") - masks.map_probability(raw - h, "sigmoid")) / (2 * h)
        assert masks.map_probability_grad(raw, "sigmoid") == pytest.approx(fd, abs=1e-6)


def test_mask_distribution_modes():
    d = MaskDistribution.from_lambda([0.25, 0.5], "sigmoid")
    np.testing.assert_allclose(d.lam, [0.25, 0.5])
    c = d.with_mode("clamp")
    np.testing.assert_allclose(c.raw, [0.25, 0.5])
    with pytest.raises(ValueError):
        MaskDistribution.from_lambda([1.2])
    with pytest.raises(ValueError):
        MaskDistribution([0.5], "clamp", beta=0.0)


def test_entropy():
    assert masks.mask_entropy(np.full(5, 0.5)) == pytest.approx(1.0)
    assert masks.mask_entropy(np.array([0.0, 1.0, 1.0])) == 0.0
    assert masks.mask_entropy(np.array([0.25, 0.75])) == pytest.approx(0.811278124, abs=1e-9)


def test_overlap():
    assert masks.mask_overlap([1, 1, 0, 0], [1, 1, 0, 0]) == 1.0
    assert masks.mask_overlap([1, 1, 0, 0], [0, 0, 1, 1]) == 0.0
    assert masks.mask_overlap([1, 1, 0, 0], [1, 0, 1, 0]) == 0.5
    with pytest.raises(ValueError):
        masks.mask_overlap([1, 1, 0], [1, 0, 0])


def test_serialization_round_trip(tmp_path):
    d = MaskDistribution.from_lambda(np.linspace(0, 1, 11), "sigmoid", 0.3)
    masks.save_distribution(tmp_path / "d.npz", d)
    back = masks.load_distribution(tmp_path / "d.npz")
    assert back.mode == "sigmoid" and back.beta == 0.3
    np.testing.assert_array_equal(back.raw, d.raw)
    m = (np.random.default_rng(0).random(1001) < 0.4).astype(float)
    blob = masks.pack_mask(m)
    assert int.from_bytes(blob[:8], "little") == 1001
    np.testing.assert_array_equal(masks.unpack_mask(blob), m)


@pytest.mark.parametrize("mode", ["sigmoid", "clamp"])
def test_project_budget_hits_target(mode):
    g = np.random.default_rng(5)
    raw = g.normal(0, 2, 500) if mode == "sigmoid" else g.uniform(-0.5, 1.5, 500)
    out = masks.project_budget(raw, mode, 50.0)
    assert masks.map_probability(out, mode).sum() == pytest.approx(50.0, rel=1e-8)
    # order of the probabilities is preserved
    lam_in, lam_out = masks.map_probability(raw, mode), masks.map_probability(out, mode)
    assert np.all(np.diff(lam_out[np.argsort(lam_in, kind="stable")]) >= -1e-12)


def test_keep_count_validation():
    assert masks.keep_count(10, 0.25) == 8
    with pytest.raises(ValueError):
        masks.keep_count(10, 1.5)
