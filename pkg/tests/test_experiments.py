from dataclasses import replace

import numpy as np
import pytest

from stochprune import data, nn
from stochprune.pipelines import PftConfig, experiments


@pytest.fixture(scope="module")
def blobs():
    ds, _ = data.synth_classify(6, 3, 400, margin=4.0, seed=1)
    return ds.subset(np.arange(300)), ds.subset(np.arange(300, 400))


CFG = PftConfig(hidden=(16,), pretrain_epochs=10, stage2_epochs=2, finetune_epochs=2, batch_size=32, sparsity=0.7)


def test_robustness_curve_endpoints(blobs):
    train, test = blobs
    net, _ = nn.train(nn.init_dense((6, 16, 3), 0), train.inputs, train.labels, CFG.sgd(10, 0.01, 0))
    rows = experiments.robustness_curve(net, None, test, [0.0, 100.0], n_draws=10)
    assert rows[0][2] == 0.0 and rows[0][1] == nn.eval_01(net, test.inputs, test.labels)
    assert rows[1][1] == pytest.approx(2 / 3, abs=0.15)
    assert rows[1][2] > 0.3


def test_robustness_noise_spares_pruned_weights(blobs):
    train, test = blobs
    net = nn.init_dense((6, 16, 3), 0)
    rows = experiments.robustness_curve(net, np.zeros(net.n_weights), test, [0.0, 5.0], n_draws=3)
    assert rows[0][1] == rows[1][1]


def test_robustness_compare_shape(blobs):
    rows = experiments.robustness_compare(*blobs, CFG, [0.0, 0.1], n_draws=3)
    assert len(rows) == 2 and len(rows[0]) == 5
    assert rows[0][2] == 0.0 and rows[0][4] == 0.0


def test_overlap_at_zero_sparsity(blobs):
    rows = experiments.overlap_vs_sparsity(*blobs, ["magnitude"], [0.0, 0.7], seeds=[0, 1], base_cfg=CFG)
    assert len(rows) == 4
    assert all(r[3] == 1.0 for r in rows if r[1] == 0.0)
    summary = experiments.summarize_overlap(rows)
    assert summary[("magnitude", 0.0)] == (1.0, 0.0)


def test_overlap_without_mask_training_is_one(blobs):
    cfg = replace(CFG, stage2_epochs=0)
    rows = experiments.overlap_vs_sparsity(*blobs, ["magnitude"], [0.8], seeds=[0], base_cfg=cfg)
    assert rows[0][3] == 1.0


def test_strong_lth_untrained_distribution_is_near_chance(blobs):
    train, test = blobs
    net = nn.init_dense((6, 64, 3), 0)
    out = experiments.strong_lth(train, test, net, replace(CFG, sparsity=0.9), mask_epochs=0, n_samples=10)
    assert out["untrained"].mean() == pytest.approx(2 / 3, abs=0.2)
    assert out["trace"] == []


def test_mask_stability(blobs):
    train, _ = blobs
    net = nn.init_dense((6, 16, 3), 0)
    sgd = CFG.sgd(3, 0.01, 0)
    freq, table = experiments.mask_stability(train, net, 1, 0.7, sgd)
    assert set(np.unique(freq)) <= {0.0, 1.0} and table == []
    freq, table = experiments.mask_stability(train, net, 3, 0.7, sgd, shuffle_seeds=[5, 5, 5])
    assert table == []
    freq, table = experiments.mask_stability(train, net, 4, 0.7, CFG.sgd(30, 0.1, 0))
    assert len(table) > 0
    assert all(0 < row[1] < 1 for row in table)
    with pytest.raises(ValueError):
        experiments.mask_stability(train, net, 2, 0.7, sgd, shuffle_seeds=[1])
