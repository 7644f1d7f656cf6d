"""Datasets: IDX parsing, standardization, splits and synthetic generators."""

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .exceptions import (BadMagicError, CountMismatchError, SplitAccessError,
                         TruncatedPayloadError)
from .linear import LinearInstance
from .rng import substream

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
STD_FLOOR = 1e-8
DATA_ENV = "STOCHPRUNE_DATA"


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree in row count")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.labels[idx], dict(self.metadata))


# -- IDX ----------------------------------------------------------------------

def _read_bytes(path):
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    opener = gzip.open if head == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(blob, expected_magic, what="file"):
    """Return the unsigned-byte payload of an IDX blob reshaped to its dims."""
    if len(blob) < 4:
        raise TruncatedPayloadError(f"{what}: missing header")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic != expected_magic:
        raise BadMagicError(f"{what}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(blob) < hdr:
        raise TruncatedPayloadError(f"{what}: truncated header")
    dims = struct.unpack(f">{ndim}I", blob[4:hdr])
    size = int(np.prod(dims))
    if len(blob) - hdr < size:
        raise TruncatedPayloadError(f"{what}: payload has {len(blob) - hdr} bytes, expected {size}")
    return np.frombuffer(blob, dtype=np.uint8, count=size, offset=hdr).reshape(dims)


def load_idx(images_path, labels_path):
    """Load an IDX image/label pair; pixels are scaled to [0, 1]."""
    img_blob = _read_bytes(images_path)
    lab_blob = _read_bytes(labels_path)
    images = parse_idx(img_blob, IMAGES_MAGIC, str(images_path))
    labels = parse_idx(lab_blob, LABELS_MAGIC, str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    digest = hashlib.sha256(img_blob + lab_blob).hexdigest()
    meta = {"source": str(images_path), "sha256": digest, "image_shape": list(images.shape[1:])}
    return Dataset(images.reshape(images.shape[0], -1) / 255.0, labels.astype(np.int64), meta)


def idx_bytes(array, magic):
    array = np.ascontiguousarray(array, dtype=np.uint8)
    ndim = magic & 0xFF
    if array.ndim != ndim:
        raise ValueError(f"array has {array.ndim} dims, magic says {ndim}")
    return struct.pack(f">I{ndim}I", magic, *array.shape) + array.tobytes()


def write_idx(images, labels, images_path, labels_path, compress=False):
    """Write uint8 images (n, rows, cols) and labels (n,) as IDX files."""
    opener = gzip.open if compress else open
    with opener(images_path, "wb") as fh:
        fh.write(idx_bytes(images, IMAGES_MAGIC))
    with opener(labels_path, "wb") as fh:
        fh.write(idx_bytes(labels, LABELS_MAGIC))


# -- standardization ----------------------------------------------------------

def standardize(train, *others):
    """Standardize with per-feature statistics of ``train`` only."""
    mean = train.inputs.mean(axis=0)
    std = np.maximum(train.inputs.std(axis=0), STD_FLOOR)
    out = []
    for ds in (train,) + others:
        meta = dict(ds.metadata, standardized=True)
        out.append(Dataset((ds.inputs - mean) / std, ds.labels, meta))
    out[0].metadata["standardization"] = {"mean": mean.tolist(), "std": std.tolist()}
    return out


# -- desk dataset ---------------------------------------------------------------

DESK_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
              "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def data_root(path=None):
    return Path(path or os.environ.get(DATA_ENV) or Path.home() / ".cache" / "stochprune")


def build_desk_idx(root, n_test=297, seed=0):
    """Write the 8x8 handwritten-digits set as an IDX train/test pair.

    Pixel intensities 0..16 are rescaled to 0..255 so the files look like
    any other IDX image set.
    """
    from sklearn.datasets import load_digits

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    digits = load_digits()
    images = np.round(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)
    perm = substream(seed, 0, "desk-split").permutation(labels.shape[0])
    test, train = perm[:n_test], perm[n_test:]
    write_idx(images[train], labels[train], root / DESK_FILES[0], root / DESK_FILES[1])
    write_idx(images[test], labels[test], root / DESK_FILES[2], root / DESK_FILES[3])
    return root


def load_desk(root=None, standardized=True):
    """Train/test datasets from an IDX directory; built on first use."""
    root = data_root(root)
    if not all((root / f).exists() or (root / (f + ".gz")).exists() for f in DESK_FILES):
        build_desk_idx(root)

    def pick(name):
        return root / name if (root / name).exists() else root / (name + ".gz")

    train = load_idx(pick(DESK_FILES[0]), pick(DESK_FILES[1]))
    test = load_idx(pick(DESK_FILES[2]), pick(DESK_FILES[3]))
    if standardized:
        train, test = standardize(train, test)
    return train, test


def subsample(ds, n, seed):
    """First ``n`` examples after a seeded shuffle."""
    if n is None or n >= len(ds):
        return ds
    idx = substream(seed, 0, "subsample").permutation(len(ds))[:n]
    out = ds.subset(np.sort(idx))
    out.metadata["subsample"] = {"n": int(n), "seed": int(seed)}
    return out


# -- splits -------------------------------------------------------------------

@dataclass
class SplitSpec:
    alpha: float
    seed: int
    prior_idx: np.ndarray
    bound_idx: np.ndarray

    def to_dict(self):
        return {"alpha": self.alpha, "seed": self.seed,
                "prior_idx": self.prior_idx.tolist(), "bound_idx": self.bound_idx.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["alpha"], d["seed"], np.asarray(d["prior_idx"], dtype=np.int64),
                   np.asarray(d["bound_idx"], dtype=np.int64))


def split(n_or_dataset, alpha, seed):
    """Seeded permutation, then the first round(alpha n) indices form S_P."""
    n = n_or_dataset if isinstance(n_or_dataset, int) else len(n_or_dataset)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    perm = substream(seed, 0, "alpha-split").permutation(n)
    k = int(round(alpha * n))
    return SplitSpec(float(alpha), int(seed), perm[:k].copy(), perm[k:].copy())


class AuditedSplit:
    """Holds both halves of a split and logs every access.

    While locked, reading the bound half raises ``SplitAccessError``; the
    prior-side stages run under the lock.
    """

    def __init__(self, dataset, spec):
        self._prior = dataset.subset(spec.prior_idx)
        self._bound = dataset.subset(spec.bound_idx)
        self.spec = spec
        self.locked = True
        self.log = []

    def prior(self, stage="?"):
        self.log.append(("prior", stage))
        return self._prior

    def bound(self, stage="?"):
        if self.locked:
            self.log.append(("bound-denied", stage))
            raise SplitAccessError(f"stage {stage!r} tried to read the bound set while locked")
        self.log.append(("bound", stage))
        return self._bound

    def unlock(self):
        self.locked = False

    def lock(self):
        self.locked = True

    @property
    def n_total(self):
        return len(self._prior) + len(self._bound)


# -- synthetic ----------------------------------------------------------------

def _covariance(d, spec):
    kind = spec if isinstance(spec, str) else spec[0]
    if kind == "identity":
        return np.eye(d)
    if kind == "diagonal":
        return np.diag(np.asarray(spec[1], dtype=np.float64))
    if kind == "pair":
        _, i, j, rho = spec
        C = np.eye(d)
        C[i, j] = C[j, i] = rho
        return C
    raise ValueError(f"unknown covariance spec {spec!r}")


def synth_linear(d, D, M, N, noise_sigma=0.0, covariance="identity", seed=0, w_star=None):
    """Gaussian inputs with the requested covariance and y = x^T w* + noise.

    ``covariance`` is ``"identity"``, ``("diagonal", variances)`` or
    ``("pair", i, j, rho)``.  The identity feature map is used, so ``D`` (if
    given) must equal ``d``.
    """
    if D != d:
        raise ValueError("the built-in generator uses the identity feature map (D = d)")
    if N < M:
        raise ValueError("N counts both splits and must be >= M")
    gen = substream(seed, 0, "synth-linear")
    C = _covariance(d, covariance)
    L = np.linalg.cholesky(C)
    if w_star is None:
        w_star = gen.standard_normal(d)
    X = gen.standard_normal((N, d)) @ L.T
    Y = X @ w_star + noise_sigma * gen.standard_normal(N)
    return LinearInstance(X[:M], Y[:M], X[M:], Y[M:], w_star=np.asarray(w_star, dtype=np.float64))


@dataclass
class BlobGenerator:
    """Isotropic Gaussian class blobs with centers on a simplex-like layout."""

    centers: np.ndarray
    scale: float = 1.0

    @property
    def n_classes(self):
        return self.centers.shape[0]

    def sample(self, n, gen):
        y = gen.integers(0, self.n_classes, n)
        x = self.centers[y] + self.scale * gen.standard_normal((n, self.centers.shape[1]))
        return x, y

    def bayes_error(self):
        if self.n_classes != 2:
            raise NotImplementedError("closed form only for two classes")
        gap = np.linalg.norm(self.centers[0] - self.centers[1]) / self.scale
        return float(norm.sf(gap / 2.0))


def synth_classify(d, classes, N, margin, seed):
    """Gaussian blobs whose centers are ``margin`` apart; returns ``(Dataset, generator)``."""
    gen = substream(seed, 0, "synth-classify-centers")
    if classes == 2:
        u = gen.standard_normal(d)
        u /= np.linalg.norm(u)
        centers = np.stack([0.5 * margin * u, -0.5 * margin * u])
    else:
        c = gen.standard_normal((classes, d))
        c /= np.linalg.norm(c, axis=1, keepdims=True)
        centers = margin / np.sqrt(2.0) * c
    blobs = BlobGenerator(centers)
    x, y = blobs.sample(N, substream(seed, 1, "synth-classify-data"))
    return Dataset(x, y, {"source": "synth_classify", "seed": seed, "margin": margin}), blobs
