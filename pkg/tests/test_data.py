import gzip
import struct

import numpy as np
import pytest

from stochprune import data, linear
from stochprune.exceptions import BadMagicError, CountMismatchError, SplitAccessError, TruncatedPayloadError


def _pair(n=5, seed=0):
    g = np.random.default_rng(seed)
    return g.integers(0, 256, (n, 3, 4), dtype=np.uint8), g.integers(0, 10, n, dtype=np.uint8)


@pytest.mark.parametrize("compress", [False, True])
def test_idx_round_trip(tmp_path, compress):
    images, labels = _pair()
    ip, lp = tmp_path / "img", tmp_path / "lab"
    data.write_idx(images, labels, ip, lp, compress=compress)
    raw = gzip.decompress(ip.read_bytes()) if compress else ip.read_bytes()
    assert raw == data.idx_bytes(images, data.IMAGES_MAGIC)
    assert raw[:4] == b"\x00\x00\x08\x03"
    assert struct.unpack(">3I", raw[4:16]) == (5, 3, 4)
    ds = data.load_idx(ip, lp)
    np.testing.assert_array_equal(np.round(ds.inputs * 255).astype(np.uint8), images.reshape(5, -1))
    np.testing.assert_array_equal(ds.labels, labels)
    assert ds.metadata["image_shape"] == [3, 4] and len(ds.metadata["sha256"]) == 64
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


def test_idx_errors(tmp_path):
    images, labels = _pair()
    blob = data.idx_bytes(images, data.IMAGES_MAGIC)
    with pytest.raises(BadMagicError):
        data.parse_idx(blob, data.LABELS_MAGIC)
    with pytest.raises(TruncatedPayloadError):
        data.parse_idx(blob[:-1], data.IMAGES_MAGIC)
    with pytest.raises(TruncatedPayloadError):
        data.parse_idx(blob[:2], data.IMAGES_MAGIC)
    ip, lp = tmp_path / "img", tmp_path / "lab"
    data.write_idx(images, labels[:4], ip, lp)
    with pytest.raises(CountMismatchError):
        data.load_idx(ip, lp)


def test_standardize_uses_train_statistics():
    g = np.random.default_rng(1)
    train = data.Dataset(g.normal(3, 2, (200, 4)), np.zeros(200))
    test = data.Dataset(g.normal(-1, 5, (50, 4)), np.zeros(50))
    tr, te = data.standardize(train, test)
    np.testing.assert_allclose(tr.inputs.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(tr.inputs.std(axis=0), 1, atol=1e-12)
    mu, sd = train.inputs.mean(axis=0), train.inputs.std(axis=0)
    np.testing.assert_allclose(te.inputs, (test.inputs - mu) / sd)


def test_standardize_constant_feature():
    train = data.Dataset(np.ones((10, 2)), np.zeros(10))
    (tr,) = data.standardize(train)
    assert np.all(np.isfinite(tr.inputs)) and np.all(tr.inputs == 0)


def test_split_properties():
    a, b = data.split(101, 0.6, 3), data.split(101, 0.6, 3)
    np.testing.assert_array_equal(a.prior_idx, b.prior_idx)
    assert a.prior_idx.size == 61 and a.bound_idx.size == 40
    assert set(a.prior_idx) | set(a.bound_idx) == set(range(101))
    assert not set(a.prior_idx) & set(a.bound_idx)
    assert not np.array_equal(a.prior_idx, data.split(101, 0.6, 4).prior_idx)
    back = data.SplitSpec.from_dict(a.to_dict())
    np.testing.assert_array_equal(back.bound_idx, a.bound_idx)
    with pytest.raises(ValueError):
        data.split(10, 1.5, 0)


def test_audited_split_lock():
    ds = data.Dataset(np.arange(20.0).reshape(10, 2), np.arange(10) % 2)
    sp = data.AuditedSplit(ds, data.split(ds, 0.5, 0))
    assert len(sp.prior("stage1")) == 5
    with pytest.raises(SplitAccessError):
        sp.bound("stage2")
    sp.unlock()
    assert len(sp.bound("stage3")) == 5
    assert sp.log == [("prior", "stage1"), ("bound-denied", "stage2"), ("bound", "stage3")]
    assert sp.n_total == 10


def test_synth_linear():
    inst = data.synth_linear(4, 4, 5000, 6000, noise_sigma=0.0, covariance=("pair", 0, 1, 0.5), seed=2)
    assert inst.M == 5000 and inst.N == 6000
    np.testing.assert_allclose(inst.Y_P, inst.X_P @ inst.w_star)
    assert inst.Sigma_P[0, 1] == pytest.approx(0.5, abs=0.05)
    w, _ = linear.least_squares(inst)
    np.testing.assert_allclose(w, inst.w_star, atol=1e-8)
    with pytest.raises(ValueError):
        data.synth_linear(3, 4, 10, 20)
    diag = data.synth_linear(2, 2, 20000, 20000, covariance=("diagonal", [1.0, 4.0]), seed=0)
    np.testing.assert_allclose(np.diag(diag.Sigma_P), [1.0, 4.0], rtol=0.05)


def test_blob_bayes_error():
    ds, blobs = data.synth_classify(3, 2, 200_000, margin=2.0, seed=0)
    assert blobs.bayes_error() == pytest.approx(0.158655, abs=1e-6)
    c = blobs.centers
    pred = np.argmin(((ds.inputs[:, None, :] - c[None]) ** 2).sum(-1), axis=1)
    assert np.mean(pred != ds.labels) == pytest.approx(blobs.bayes_error(), abs=0.005)
    ds5, b5 = data.synth_classify(4, 5, 100, 3.0, 0)
    assert b5.n_classes == 5 and ds5.labels.max() < 5


def test_subsample():
    ds = data.Dataset(np.arange(40.0).reshape(20, 2), np.arange(20))
    a = data.subsample(ds, 7, 1)
    assert len(a) == 7 and np.all(np.diff(a.labels) > 0)
    np.testing.assert_array_equal(a.labels, data.subsample(ds, 7, 1).labels)
    assert data.subsample(ds, None, 1) is ds


def test_desk_files(desk):
    train, test = desk
    assert train.inputs.shape == (1500, 64) and test.inputs.shape == (297, 64)
    assert set(np.unique(train.labels)) == set(range(10))
    np.testing.assert_allclose(train.inputs.mean(axis=0), 0, atol=1e-9)
