"""Malicious client updates.

CollaPois steers the global model toward a pre-trained Trojaned model ``X``:
every compromised client sends ``psi * (X - theta)`` with its own
``psi ~ U[a, b]``. The baselines are data poisoning (DPois), model
replacement (MRepl) and the distributed backdoor attack (DBA).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, TriggerSpec, poison
from .errors import DimensionMismatch, EmptyTrainSplit, TrojanTrainingFailed
from .metrics import attack_success_rate, benign_accuracy
from .model import TrainConfig, batch_schedule, init_params, local_train, loss_and_grad

ATTACKS = ("collapois", "dpois", "mrepl", "dba", "none")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    round: int
    delta: np.ndarray
    malicious: bool = False

    @property
    def norm(self):
        return float(np.linalg.norm(self.delta))


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "collapois"
    compromised_fraction: float = 0.05
    psi_low: float = 0.9
    psi_high: float = 1.0
    clip_bound: float | None = None
    upscale_floor: float = 0.0
    mrepl_scale: float = 1.0
    dpois_rate: float = 0.5

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ValueError(f"unknown attack {self.kind!r}")
        if not 0.0 <= self.compromised_fraction < 1.0:
            raise ValueError("compromised_fraction must be in [0, 1)")
        if not 0.0 < self.psi_low <= self.psi_high <= 1.0:
            raise ValueError("need 0 < psi_low <= psi_high <= 1")
        if self.clip_bound is not None and not self.clip_bound > 0:
            raise ValueError("clip_bound must be positive")
        if self.upscale_floor < 0:
            raise ValueError("upscale_floor must be >= 0")
        if self.clip_bound is not None and self.upscale_floor > self.clip_bound:
            raise ValueError("upscale_floor must not exceed clip_bound")

    def num_compromised(self, num_clients):
        return math.ceil(self.compromised_fraction * num_clients - 1e-9)


@dataclass(frozen=True)
class TrojanTrainConfig:
    lr: float = 0.1
    batch_size: int = 32
    epochs: int = 50
    max_epochs: int = 400
    holdout_frac: float = 0.2
    min_attack_sr: float = 0.9
    min_benign_ac: float = 0.8


@dataclass
class TrojanedModel:
    X: np.ndarray
    train_loss_history: list = field(default_factory=list)
    auxiliary_size: int = 0
    holdout_benign_ac: float = float("nan")
    holdout_attack_sr: float = float("nan")


def train_trojaned_model(arch, aux, trig, cfg=None, rng=None, start=None):
    """Centralised SGD on ``aux`` plus a fully Trojaned copy of it.

    A slice of ``aux`` is held out; training continues in chunks of
    ``cfg.epochs`` until the held-out Attack SR and Benign AC reach their
    thresholds or ``cfg.max_epochs`` is spent.
    """
    cfg = cfg or TrojanTrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if aux is None or len(aux) == 0:
        raise TrojanTrainingFailed("auxiliary dataset is empty")
    n = len(aux)
    perm = rng.permutation(n)
    n_hold = int(math.floor(cfg.holdout_frac * n + 0.5)) if n >= 2 else 0
    hold, fit = aux.subset(np.sort(perm[:n_hold])), aux.subset(np.sort(perm[n_hold:]))
    train = Dataset.concat([fit, poison(fit, trig, 1.0)])

    theta = init_params(arch, rng) if start is None else np.array(start, dtype=np.float64)
    steps_per_epoch = max(1, math.ceil(len(train) / cfg.batch_size))
    history, epochs = [], 0
    while True:
        for _ in range(cfg.epochs):
            losses = []
            for idx in batch_schedule(len(train), cfg.batch_size, steps_per_epoch, rng):
                loss, g = loss_and_grad(arch, theta, train.x[idx], train.y[idx])
                theta -= cfg.lr * g
                losses.append(loss)
            history.append(float(np.mean(losses)))
        epochs += cfg.epochs
        ac = benign_accuracy(arch, theta, hold) if len(hold) else float("nan")
        sr = attack_success_rate(arch, theta, hold, trig) if len(hold) else float("nan")
        ok_ac = math.isnan(ac) or ac >= cfg.min_benign_ac
        ok_sr = math.isnan(sr) or sr >= cfg.min_attack_sr
        if ok_ac and ok_sr:
            break
        if epochs >= cfg.max_epochs:
            raise TrojanTrainingFailed(
                f"after {epochs} epochs: held-out Benign AC {ac:.3f}, Attack SR {sr:.3f}"
            )
    if not np.all(np.isfinite(theta)):
        raise TrojanTrainingFailed("Trojaned model diverged")
    return TrojanedModel(theta, history, n, ac, sr)


def _check_same(a, b):
    if np.shape(a) != np.shape(b):
        raise DimensionMismatch(f"vectors of shape {np.shape(a)} and {np.shape(b)}")


def bound_norm(delta, clip_bound=None, upscale_floor=0.0):
    """Scale ``delta`` down to ``clip_bound`` or up to ``upscale_floor``."""
    norm = float(np.linalg.norm(delta))
    if clip_bound is not None and norm > clip_bound:
        return delta * (clip_bound / norm)
    if upscale_floor > 0 and 0 < norm < upscale_floor:
        return delta * (upscale_floor / norm)
    return delta


def collapois_update(X, theta, rng, cfg, client_id=-1, round_=0):
    """``psi * (X - theta)`` with ``psi ~ U[a, b]``, then norm clipping / upscaling."""
    _check_same(X, theta)
    psi = rng.uniform(cfg.psi_low, cfg.psi_high) if cfg.psi_high > cfg.psi_low else cfg.psi_low
    delta = psi * (np.asarray(X) - np.asarray(theta))
    delta = bound_norm(delta, cfg.clip_bound, cfg.upscale_floor)
    return ClientUpdate(client_id, round_, delta, True)


def dpois_update(arch, theta, train, trig, train_cfg, rng, rate=0.5, prox_mu=0.0,
                 client_id=-1, round_=0):
    """Local training on the train split plus Trojaned copies of a ``rate`` share of it."""
    if train is None or len(train) == 0:
        raise EmptyTrainSplit("DPois needs a non-empty train split")
    data = train
    if rate > 0:
        data = Dataset.concat([train, poison(train, trig, rate, rng)])
    _, delta = local_train(arch, theta, data, train_cfg, prox_mu, rng)
    return ClientUpdate(client_id, round_, delta, True)


def mrepl_update(X, theta, n_expected, server_lr, scale=1.0, client_id=-1, round_=0):
    """Update that, averaged over ``n_expected`` clients, lands the global model on ``X``."""
    _check_same(X, theta)
    delta = (n_expected / server_lr) * (np.asarray(X) - np.asarray(theta)) * scale
    return ClientUpdate(client_id, round_, delta, True)


def dba_assign(trig, num_compromised):
    """Split the trigger round-robin into ``num_compromised`` disjoint sub-triggers."""
    if num_compromised < 1:
        raise ValueError("need at least one compromised client")
    subs = []
    for k in range(num_compromised):
        coords = trig.coordinates[k::num_compromised]
        pattern = trig.pattern[k::num_compromised]
        subs.append(TriggerSpec(coords, pattern, trig.target_label))
    return subs
