import math
from dataclasses import replace

import numpy as np
import pytest

from stochprune import bounds, data, masks, nn
from stochprune.exceptions import ConfigError
from stochprune.pipelines import PbpConfig, PftConfig, pbp, pft
from stochprune.pipelines.pft import budget_schedule


@pytest.fixture(scope="module")
def blobs():
    ds, _ = data.synth_classify(6, 2, 400, margin=3.0, seed=0)
    return ds.subset(np.arange(300)), ds.subset(np.arange(300, 400))


SMALL = dict(hidden=(16,), pretrain_epochs=5, stage2_epochs=3, finetune_epochs=2, batch_size=32)


def test_pft_zero_sparsity_keeps_everything(blobs):
    out = pft(*blobs, PftConfig(sparsity=0.0, **SMALL))
    assert np.all(out["hard_mask"] == 1)
    assert out["metrics"]["overlap"] == 1.0


@pytest.mark.parametrize("criterion", ["random", "magnitude", "snip"])
def test_pft_popcount(blobs, criterion):
    out = pft(*blobs, PftConfig(sparsity=0.95, criterion=criterion, **SMALL))
    D = out["metrics"]["D"]
    assert out["hard_mask"].sum() == masks.keep_count(D, 0.95) == out["metrics"]["kept"]
    assert out["osp_mask"].sum() == masks.keep_count(D, 0.95)
    # pruned weights of the final net are exactly zero
    assert np.all(out["sparse_net"].weights[out["hard_mask"] == 0] == 0)
    for key in ("dense_test_err", "osp_test_err", "pft_test_err"):
        assert 0.0 <= out["metrics"][key] <= 1.0


def test_pft_deterministic(blobs):
    a = pft(*blobs, PftConfig(sparsity=0.8, **SMALL))
    b = pft(*blobs, PftConfig(sparsity=0.8, **SMALL))
    np.testing.assert_array_equal(a["hard_mask"], b["hard_mask"])
    np.testing.assert_array_equal(a["sparse_net"].weights, b["sparse_net"].weights)


def test_pft_rejects_bad_configs(blobs):
    with pytest.raises(ValueError):
        PftConfig(sparsity=1.0)
    with pytest.raises(ValueError):
        PftConfig(criterion="grasp")
    with pytest.raises(ValueError):
        pft(*blobs, PftConfig(sparsity=0.999, hidden=(2,), pretrain_epochs=0, stage2_epochs=0, finetune_epochs=0))


def test_budget_schedule():
    cap = budget_schedule(10, 11, 2)
    assert cap(0, 100.0) is None and cap(1, 100.0) is None
    caps = [cap(e, 100.0) for e in range(2, 11)]
    assert np.all(np.diff(caps) <= 0)
    assert caps[0] < 100.0 and caps[-1] == 10.0
    assert min(caps) >= 10.0


def test_pbp_untouched_posterior(blobs):
    cfg = PbpConfig(alpha=0.5, stage3_epochs=0, mc_samples=50, test_gibbs_samples=5, **SMALL)
    out = pbp(*blobs, cfg)
    rep = out["bound_report"]
    assert rep.kl_total == 0.0
    eps = bounds.epsilon_data_dependent(0.0, 0.5, 300, rep.delta_bound)
    assert rep.epsilon == pytest.approx(eps)
    assert rep.bound == pytest.approx(min(1.0, bounds.bound_thm1(rep.emp_gibbs_01, eps)[2]))
    np.testing.assert_array_equal(out["posterior"].lam, out["prior"].lam)


def test_pbp_access_log_and_split(blobs):
    cfg = PbpConfig(alpha=0.6, stage3_epochs=1, mc_samples=20, test_gibbs_samples=5, **SMALL)
    out = pbp(*blobs, cfg)
    assert out["access_log"] == [("prior", "stage1-2"), ("bound", "stage3")]
    sp = out["split"]
    assert sp.prior_idx.size == 180 and sp.bound_idx.size == 120
    rep = out["bound_report"]
    assert rep.n_bound == pytest.approx(120)
    assert math.isfinite(rep.bound) and rep.kl_total >= 0
    assert np.all((out["prior"].lam >= 1e-4) & (out["prior"].lam <= 1 - 1e-4))
    assert np.all(out["posterior"].sigma == out["prior"].sigma)


def test_pbp_sigma_grid_adds_penalty(blobs):
    cfg = PbpConfig(alpha=0.5, stage3_epochs=0, mc_samples=20, test_gibbs_samples=5,
                    sigma2_grid=(math.exp(-9), math.exp(-6)), **SMALL)
    rep = pbp(*blobs, cfg)["bound_report"]
    assert rep.grid_penalty == pytest.approx(math.log(2))


def test_pbp_config_validation():
    with pytest.raises(ConfigError):
        PbpConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        PbpConfig(delta=0.01, delta_mc=0.02)
    with pytest.raises(ConfigError):
        PbpConfig(sigma2=0.0)
