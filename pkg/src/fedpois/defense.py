"""Server-side aggregation rules.

Every rule maps the round's list of :class:`~fedpois.attacks.ClientUpdate`
to one vector that the engine adds to the global model
(``theta_next = theta + aggregate``). Updates are sorted by client id first,
so results never depend on arrival order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyRound, OvertrimmedRound

DEFENSES = ("fedavg", "krum", "multikrum", "median", "trimmed_mean", "norm_bound", "dp", "rlr")


@dataclass(frozen=True)
class DefenseConfig:
    kind: str = "fedavg"
    server_lr: float = 1.0
    krum_f: int = 1
    multikrum_m: int = 1
    trim_beta: float = 0.1
    norm_M: float = 1.0
    noise_sigma: float = 0.0
    dp_clip: float = 1.0
    dp_sigma: float = 0.01
    rlr_threshold: int = 1

    def __post_init__(self):
        if self.kind not in DEFENSES:
            raise ValueError(f"unknown defense {self.kind!r}")
        if not self.server_lr > 0:
            raise ValueError("server_lr must be > 0")
        if not 0.0 <= self.trim_beta < 0.5:
            raise ValueError("trim_beta must be in [0, 0.5)")
        if not (self.norm_M > 0 and self.dp_clip > 0):
            raise ValueError("clipping norms must be > 0")
        if self.rlr_threshold < 1:
            raise ValueError("rlr_threshold must be >= 1")


def _stack(updates):
    if not updates:
        raise EmptyRound("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    return np.stack([u.delta for u in ordered]), [u.client_id for u in ordered]


def fedavg(updates, server_lr=1.0):
    deltas, _ = _stack(updates)
    return server_lr * deltas.sum(axis=0) / deltas.shape[0]


def krum_scores(deltas, f):
    n = deltas.shape[0]
    sq = ((deltas[:, None, :] - deltas[None, :, :]) ** 2).sum(axis=-1)
    k = min(n - 1, max(1, n - f - 2)) if n > 1 else 0
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(sq[i], i))
        scores[i] = others[:k].sum()
    return scores


def krum(updates, f, m=1):
    """Mean of the ``m`` updates closest to their ``n - f - 2`` nearest neighbours.

    ``m = 1`` is Krum, larger ``m`` is Multi-Krum. Equal scores go to the
    lower client id.
    """
    deltas, ids = _stack(updates)
    n = deltas.shape[0]
    if n < 2 * f + 3:
        warnings.warn(f"krum with n={n} < 2f+3={2 * f + 3}: no robustness guarantee", stacklevel=2)
    scores = krum_scores(deltas, f)
    order = sorted(range(n), key=lambda i: (scores[i], ids[i]))
    chosen = order[: max(1, min(m, n))]
    return deltas[chosen].mean(axis=0)


def coordinate_median(updates):
    deltas, _ = _stack(updates)
    return np.median(deltas, axis=0)


def trimmed_mean(updates, beta):
    deltas, _ = _stack(updates)
    n = deltas.shape[0]
    k = int(math.floor(beta * n))
    if 2 * k >= n:
        raise OvertrimmedRound(f"trimming {k} from each side leaves nothing of {n}")
    return np.sort(deltas, axis=0)[k: n - k].mean(axis=0)


def clip_to(delta, bound):
    norm = float(np.linalg.norm(delta))
    return delta * (bound / norm) if norm > bound else delta


def norm_bound(updates, M, noise_sigma=0.0, rng=None):
    deltas, _ = _stack(updates)
    agg = np.stack([clip_to(d, M) for d in deltas]).mean(axis=0)
    if noise_sigma > 0:
        agg = agg + (rng if rng is not None else np.random.default_rng(0)).normal(0.0, noise_sigma, agg.shape)
    return agg


def dp_aggregate(updates, clip, sigma, rng=None):
    deltas, _ = _stack(updates)
    total = np.stack([clip_to(d, clip) for d in deltas]).sum(axis=0)
    if sigma > 0:
        total = total + (rng if rng is not None else np.random.default_rng(0)).normal(0.0, sigma * clip, total.shape)
    return total / deltas.shape[0]


def robust_lr(updates, threshold, server_lr=1.0):
    """Mean update with the server rate flipped where sign agreement is weak.

    Coordinate j keeps ``+server_lr`` when ``|sum_i sign(delta_i[j])| >=
    threshold`` and gets ``-server_lr`` otherwise (an exact tie counts as weak).
    """
    deltas, _ = _stack(updates)
    agreement = np.abs(np.sign(deltas).sum(axis=0))
    lr = np.where(agreement >= threshold, server_lr, -server_lr)
    return lr * deltas.mean(axis=0)


def aggregate(updates, cfg, rng=None):
    """Dispatch on ``cfg.kind``; every rule's output is scaled by the server rate."""
    k = cfg.kind
    if k == "fedavg":
        return fedavg(updates, cfg.server_lr)
    if k == "rlr":
        return robust_lr(updates, cfg.rlr_threshold, cfg.server_lr)
    if k == "krum":
        out = krum(updates, cfg.krum_f, 1)
    elif k == "multikrum":
        out = krum(updates, cfg.krum_f, cfg.multikrum_m)
    elif k == "median":
        out = coordinate_median(updates)
    elif k == "trimmed_mean":
        out = trimmed_mean(updates, cfg.trim_beta)
    elif k == "norm_bound":
        out = norm_bound(updates, cfg.norm_M, cfg.noise_sigma, rng)
    elif k == "dp":
        out = dp_aggregate(updates, cfg.dp_clip, cfg.dp_sigma, rng)
    else:
        raise ValueError(f"unknown defense {k!r}")
    return cfg.server_lr * out
