"""Datasets, non-IID partitioning and backdoor triggers.

A dataset is a pair of arrays: features ``x`` with shape ``(n, d)`` and
integer labels ``y`` with shape ``(n,)``. Clients hold a :class:`ClientShard`
that is later split into train / test / validation parts.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    CountMismatch,
    EmptyShard,
    ExhaustedRetries,
    MagicMismatch,
    TruncatedFile,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class DatasetMeta:
    num_classes: int
    feature_dim: int
    num_samples: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.num_samples < 0:
            raise ValueError("num_samples must be >= 0")


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if y.shape != (x.shape[0],):
            raise ValueError("labels must match the number of samples")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.shape[0]

    @property
    def feature_dim(self):
        return self.x.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.num_classes)

    def label_histogram(self):
        return np.bincount(self.y, minlength=self.num_classes)

    @staticmethod
    def concat(parts, num_classes=None, feature_dim=None):
        parts = list(parts)
        if num_classes is None:
            num_classes = parts[0].num_classes
        nonempty = [p for p in parts if len(p)]
        if not nonempty:
            d = feature_dim if feature_dim is not None else (parts[0].feature_dim if parts else 1)
            return Dataset(np.empty((0, d)), np.empty(0, dtype=np.int64), num_classes)
        return Dataset(
            np.concatenate([p.x for p in nonempty]),
            np.concatenate([p.y for p in nonempty]),
            num_classes,
        )


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    data: Dataset
    compromised: bool = False
    train: Dataset | None = None
    test: Dataset | None = None
    val: Dataset | None = None

    @property
    def label_histogram(self):
        return self.data.label_histogram()

    def __len__(self):
        return len(self.data)


@dataclass(frozen=True)
class PartitionConfig:
    alpha: float
    num_clients: int
    min_samples_per_client: int = 2
    seed: int = 0
    max_retries: int = 100

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")


@dataclass(frozen=True)
class TriggerSpec:
    coordinates: tuple
    pattern: tuple
    target_label: int = 0

    def __post_init__(self):
        coords = tuple(int(c) for c in self.coordinates)
        pattern = tuple(float(p) for p in self.pattern)
        if len(coords) != len(pattern):
            raise ValueError("trigger pattern must match its coordinates")
        if any(b <= a for a, b in zip(coords, coords[1:])):
            raise ValueError("trigger coordinates must be strictly increasing")
        if coords and coords[0] < 0:
            raise ValueError("trigger coordinate below 0")
        if not all(np.isfinite(pattern)):
            raise ValueError("trigger pattern must be finite")
        object.__setattr__(self, "coordinates", coords)
        object.__setattr__(self, "pattern", pattern)

    @classmethod
    def default(cls, feature_dim, num_coords=4, magnitude=0.5, target_label=0):
        """Additive pattern on the last ``num_coords`` features."""
        k = min(num_coords, feature_dim)
        coords = tuple(range(feature_dim - k, feature_dim))
        return cls(coords, (magnitude,) * k, target_label)

    def apply(self, x):
        out = np.array(x, dtype=np.float64, copy=True)
        if self.coordinates:
            if self.coordinates[-1] >= out.shape[-1]:
                raise ValueError("trigger coordinate outside feature range")
            out[..., list(self.coordinates)] += np.asarray(self.pattern)
        return out


# ----------------------------------------------------------------------------
# sources
# ----------------------------------------------------------------------------

def _simplex_means(num_classes, dim, separation):
    # regular simplex with pairwise distance `separation`, living in L-1 dims
    centered = np.eye(num_classes) - 1.0 / num_classes
    u, s, _ = np.linalg.svd(centered)
    basis = u[:, : num_classes - 1] * s[: num_classes - 1]
    coords = basis * (separation / np.sqrt(2.0))
    means = np.zeros((num_classes, dim))
    means[:, : num_classes - 1] = coords
    return means


def generate_synthetic(meta, class_separation, seed, noise_std=1.0):
    """Isotropic Gaussian blobs centred on a regular simplex.

    Class means occupy the first ``L - 1`` coordinates; the remaining
    features are pure noise. Class counts are balanced within one sample.
    """
    if not class_separation > 0:
        raise ValueError("class_separation must be > 0")
    if meta.feature_dim < meta.num_classes - 1:
        raise ValueError(
            f"feature_dim={meta.feature_dim} cannot hold a {meta.num_classes}-class simplex"
        )
    rng = np.random.default_rng(seed)
    means = _simplex_means(meta.num_classes, meta.feature_dim, class_separation)
    n = meta.num_samples
    y = np.arange(n, dtype=np.int64) % meta.num_classes
    y = y[rng.permutation(n)]
    x = means[y] + noise_std * rng.standard_normal((n, meta.feature_dim))
    return Dataset(x, y, meta.num_classes)


def _read_header(buf, what, magic, ndims):
    need = 4 * (1 + ndims)
    if len(buf) < 4:
        raise TruncatedFile(f"{what}: missing magic number")
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise MagicMismatch(f"{what}: magic 0x{got:08x}, expected 0x{magic:08x}")
    if len(buf) < need:
        raise TruncatedFile(f"{what}: header truncated")
    return struct.unpack(">" + "I" * ndims, buf[4:need]), need


def ingest_idx(image_bytes, label_bytes, num_classes=None):
    """Parse an IDX image/label file pair (MNIST family) into a dataset.

    Pixels are scaled to [0, 1] and flattened row-major.
    """
    (count, rows, cols), off = _read_header(image_bytes, "image file", IDX_IMAGE_MAGIC, 3)
    (nlabels,), loff = _read_header(label_bytes, "label file", IDX_LABEL_MAGIC, 1)
    if count != nlabels:
        raise CountMismatch(f"{count} images but {nlabels} labels")
    npix = count * rows * cols
    if len(image_bytes) - off < npix:
        raise TruncatedFile("image file: pixel data truncated")
    if len(label_bytes) - loff < nlabels:
        raise TruncatedFile("label file: label data truncated")
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=npix, offset=off)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=nlabels, offset=loff)
    x = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if num_classes is None:
        num_classes = max(2, int(y.max()) + 1) if y.size else 2
    return Dataset(x, y, num_classes)


def write_idx(images, labels):
    """Encode ``uint8`` images ``(n, rows, cols)`` and labels as IDX bytes."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes()
    return img, lab


# ----------------------------------------------------------------------------
# partitioning
# ----------------------------------------------------------------------------

def sample_dirichlet(rng, alpha, size):
    """Symmetric Dirichlet draw that stays finite for very small ``alpha``.

    Uses log G = log Gamma(alpha + 1) + log(U) / alpha, then a softmax, so
    that tiny concentrations do not underflow every component to zero.
    """
    g = rng.gamma(alpha + 1.0, size=size)
    u = rng.random(size)
    logs = np.log(g) + np.log(u) / alpha
    logs -= logs.max()
    w = np.exp(logs)
    return w / w.sum()


def largest_remainder(total, weights):
    """Integer allocation of ``total`` proportional to ``weights``.

    Remainder units go to the largest fractional parts, ties to the lower index.
    """
    weights = np.asarray(weights, dtype=np.float64)
    raw = total * weights / weights.sum()
    base = np.floor(raw).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        frac = raw - base
        order = np.lexsort((np.arange(len(frac)), -frac))
        base[order[:short]] += 1
    return base


def dirichlet_partition(dataset, cfg):
    """Split ``dataset`` across ``cfg.num_clients`` clients with label skew.

    Each client draws a class-proportion vector from Dir(alpha * 1_L). Every
    class pool is then divided among clients in proportion to their weight on
    that class (largest-remainder rounding), so the union of shards is exactly
    the dataset. Draws are repeated while a shard falls below
    ``min_samples_per_client``.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot partition an empty dataset")
    N = cfg.num_clients
    if N == 1:
        return [ClientShard(0, dataset)]
    if n < N * cfg.min_samples_per_client:
        raise ExhaustedRetries(
            f"{n} samples cannot give {N} clients {cfg.min_samples_per_client} each"
        )
    L = dataset.num_classes
    rng = np.random.default_rng(cfg.seed)
    by_class = [np.flatnonzero(dataset.y == j) for j in range(L)]
    for _ in range(cfg.max_retries):
        props = np.stack([sample_dirichlet(rng, cfg.alpha, L) for _ in range(N)])
        assigned = [[] for _ in range(N)]
        for j in range(L):
            pool = by_class[j]
            if pool.size == 0:
                continue
            pool = pool[rng.permutation(pool.size)]
            counts = largest_remainder(pool.size, props[:, j])
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for i in range(N):
                assigned[i].append(pool[bounds[i]: bounds[i + 1]])
        sizes = [sum(len(a) for a in parts) for parts in assigned]
        if min(sizes) >= cfg.min_samples_per_client:
            return [
                ClientShard(i, dataset.subset(np.sort(np.concatenate(parts))))
                for i, parts in enumerate(assigned)
            ]
    raise ExhaustedRetries(
        f"no partition met min_samples_per_client={cfg.min_samples_per_client} "
        f"after {cfg.max_retries} draws"
    )


def split_counts(n, train_frac=0.7, test_frac=0.15):
    """Train/test/validation sizes; test gets at least one sample when n >= 2."""
    n_test = int(np.floor(test_frac * n + 0.5))
    n_val = int(np.floor((1.0 - train_frac - test_frac) * n + 0.5))
    if n >= 2:
        n_test = max(1, n_test)
    n_val = max(0, min(n_val, n - n_test - 1))
    n_train = n - n_test - n_val
    return n_train, n_test, n_val


def split_shard(shard, rng, train_frac=0.7, test_frac=0.15):
    n = len(shard)
    n_train, n_test, _ = split_counts(n, train_frac, test_frac)
    perm = rng.permutation(n)
    tr, te, va = np.split(perm, [n_train, n_train + n_test])
    return replace(
        shard,
        train=shard.data.subset(np.sort(tr)),
        test=shard.data.subset(np.sort(te)),
        val=shard.data.subset(np.sort(va)),
    )


# ----------------------------------------------------------------------------
# poisoning and label statistics
# ----------------------------------------------------------------------------

def poison(data, trig, fraction=1.0, rng=None):
    """Return the Trojaned copies of a selected fraction of ``data``.

    The selected samples get ``trig`` added to their features and their label
    set to the target; the input is not modified. With ``fraction=1`` every
    sample is poisoned, in the original order. Poisoning is additive, so
    applying it twice shifts features twice.
    """
    if isinstance(data, ClientShard):
        data = data.data
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(data)
    if n == 0:
        return data.subset([])
    if fraction >= 1.0:
        idx = np.arange(n)
    else:
        k = max(1, int(np.floor(fraction * n + 0.5)))
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.choice(n, size=k, replace=False))
    x = trig.apply(data.x[idx])
    y = np.full(idx.size, trig.target_label, dtype=np.int64)
    return Dataset(x, y, data.num_classes)


def cumulative_label_distribution(shard):
    """Prefix sums of the label histogram: entry j counts labels <= j."""
    data = shard.data if isinstance(shard, ClientShard) else shard
    if len(data) == 0:
        raise EmptyShard("cumulative label distribution of an empty shard")
    return np.cumsum(data.label_histogram()).astype(np.float64)


# ----------------------------------------------------------------------------
# text serialization: one sample per line, "client_id,label,f_0,...,f_{d-1}"
# ----------------------------------------------------------------------------

def shards_to_text(shards):
    out = io.StringIO()
    for shard in shards:
        for xi, yi in zip(shard.data.x, shard.data.y):
            feats = ",".join(repr(float(v)) for v in xi)
            out.write(f"{shard.client_id},{int(yi)},{feats}\n")
    return out.getvalue()


def shards_from_text(text, num_classes):
    rows = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        cid, label, *feats = line.split(",")
        rows.setdefault(int(cid), []).append((int(label), [float(f) for f in feats]))
    shards = []
    for cid in sorted(rows):
        ys = np.array([r[0] for r in rows[cid]], dtype=np.int64)
        xs = np.array([r[1] for r in rows[cid]], dtype=np.float64)
        shards.append(ClientShard(cid, Dataset(xs, ys, num_classes)))
    return shards
