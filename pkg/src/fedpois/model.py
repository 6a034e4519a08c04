"""Multilayer perceptron over a flat parameter vector.

All parameters live in one float64 vector so that updates, attacks,
aggregation rules and the bound calculators only ever deal with plain
``numpy`` arrays. Layer ``k`` stores its weight matrix (row-major, shape
``(fan_in, fan_out)``) followed by its bias.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyTrainSplit


@dataclass(frozen=True)
class MlpArch:
    layer_sizes: tuple
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need at least input and output layers of positive width")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def build(cls, input_dim, num_classes, hidden=(32, 32), activation="relu"):
        return cls((input_dim, *hidden, num_classes), activation)

    @property
    def num_params(self):
        s = self.layer_sizes
        return sum(a * b + b for a, b in zip(s[:-1], s[1:]))

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def num_classes(self):
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class TrainConfig:
    local_lr: float = 0.05
    local_steps: int = 5
    batch_size: int = 16

    def __post_init__(self):
        if not self.local_lr >= 0:
            raise ValueError("local_lr must be >= 0")
        if self.local_steps < 1:
            raise ValueError("local_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def unflatten(arch, params):
    """Views ``[(W0, b0), (W1, b1), ...]`` into ``params`` (no copies)."""
    params = np.asarray(params)
    if params.shape != (arch.num_params,):
        raise DimensionMismatch(
            f"parameter vector has length {params.size}, architecture needs {arch.num_params}"
        )
    layers, off = [], 0
    for a, b in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        w = params[off: off + a * b].reshape(a, b)
        off += a * b
        layers.append((w, params[off: off + b]))
        off += b
    return layers


def flatten(layers):
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def init_params(arch, rng):
    """He-uniform weights, zero biases."""
    parts = []
    for a, b in zip(arch.layer_sizes[:-1], arch.layer_sizes[1:]):
        bound = np.sqrt(6.0 / a)
        parts.append(rng.uniform(-bound, bound, size=a * b))
        parts.append(np.zeros(b))
    return np.concatenate(parts)


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    return (z > 0).astype(z.dtype) if name == "relu" else 1.0 - a * a


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(arch, params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != arch.input_dim:
        raise DimensionMismatch(f"input has {x.shape[-1]} features, expected {arch.input_dim}")
    layers = unflatten(arch, params)
    h = x
    for k, (w, b) in enumerate(layers):
        h = h @ w + b
        if k < len(layers) - 1:
            h = _act(arch.activation, h)
    return h


def forward(arch, params, x):
    """Class probabilities for one sample ``(d,)`` or a batch ``(n, d)``."""
    return softmax(logits(arch, params, x))


def predict(arch, params, x):
    # argmax picks the lowest index on ties
    return np.argmax(logits(arch, params, x), axis=-1)


def loss_and_grad(arch, params, x, y):
    """Mean cross-entropy over a batch and its gradient w.r.t. ``params``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1] != arch.input_dim:
        raise DimensionMismatch(f"input has {x.shape[1]} features, expected {arch.input_dim}")
    layers = unflatten(arch, params)
    n = x.shape[0]

    pre, post = [], [x]
    h = x
    for k, (w, b) in enumerate(layers):
        z = h @ w + b
        pre.append(z)
        h = _act(arch.activation, z) if k < len(layers) - 1 else z
        post.append(h)

    z_out = pre[-1]
    shifted = z_out - z_out.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - log_norm[:, None]
    loss = -logp[np.arange(n), y].mean()

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads = []
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        grads.append((post[k].T @ delta, delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ w.T) * _act_grad(arch.activation, pre[k - 1], post[k])
    grads.reverse()
    return float(max(loss, 0.0)), flatten(grads)


def batch_schedule(n, batch_size, steps, rng):
    """Index arrays for ``steps`` mini-batches drawn by cycling shuffled epochs."""
    if batch_size >= n:
        return [np.arange(n)] * steps
    batches, perm, pos = [], rng.permutation(n), 0
    for _ in range(steps):
        if pos + batch_size > n:
            perm, pos = rng.permutation(n), 0
        batches.append(perm[pos: pos + batch_size])
        pos += batch_size
    return batches


def local_train(arch, start, data, cfg, prox_mu=0.0, rng=None):
    """Run ``cfg.local_steps`` SGD steps from ``start`` on ``data``.

    With ``prox_mu > 0`` each step also pulls toward ``start``: the loss
    gradient step is followed by the closed-form proximal step of
    ``prox_mu / 2 * ||theta - start||^2``, which stays stable for any
    ``prox_mu``. Returns ``(final, final - start)``.
    """
    if data is None or len(data) == 0:
        raise EmptyTrainSplit("local training needs a non-empty train split")
    rng = rng if rng is not None else np.random.default_rng(0)
    start = np.asarray(start, dtype=np.float64)
    theta = start.copy()
    for idx in batch_schedule(len(data), cfg.batch_size, cfg.local_steps, rng):
        _, g = loss_and_grad(arch, theta, data.x[idx], data.y[idx])
        theta -= cfg.local_lr * g
        if prox_mu > 0:
            step = cfg.local_lr * prox_mu
            theta = (theta + step * start) / (1.0 + step)
    return theta, theta - start


# ----------------------------------------------------------------------------
# checkpoints: uint64 little-endian length, then float64 little-endian values
# ----------------------------------------------------------------------------

def params_to_bytes(params):
    params = np.asarray(params, dtype="<f8")
    return struct.pack("<Q", params.size) + params.tobytes()


def params_from_bytes(buf):
    if len(buf) < 8:
        raise ValueError("checkpoint shorter than its length header")
    (n,) = struct.unpack("<Q", buf[:8])
    if len(buf) != 8 + 8 * n:
        raise ValueError(f"checkpoint declares {n} values but holds {(len(buf) - 8) / 8:g}")
    return np.frombuffer(buf, dtype="<f8", offset=8, count=n).astype(np.float64)


def save_params(path, params):
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def load_params(path):
    with open(path, "rb") as f:
        return params_from_bytes(f.read())
