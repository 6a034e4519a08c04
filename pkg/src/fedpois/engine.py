"""Round-by-round federated training with compromised clients.

:class:`Simulation` builds everything a run needs from an
:class:`~fedpois.config.ExperimentConfig` (data, partition, compromised set,
Trojaned model, calibrated norms) and then advances one round at a time:

1. every client joins the round independently with probability ``q``;
2. benign clients train locally, compromised ones send the attack's update;
3. the defense aggregates and the global model moves by the aggregate;
4. a :class:`RoundRecord` captures metrics, angles and bound checks.

All randomness is drawn from :func:`fedpois.rng.stream` keyed by purpose,
client and round, so a run is a pure function of its config.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import theory
from .attacks import (
    AttackConfig,
    ClientUpdate,
    TrojanTrainConfig,
    collapois_update,
    dba_assign,
    dpois_update,
    mrepl_update,
    train_trojaned_model,
)
from .config import ExperimentConfig, FLSection
from .data import (
    Dataset,
    DatasetMeta,
    PartitionConfig,
    TriggerSpec,
    dirichlet_partition,
    generate_synthetic,
    ingest_idx,
    split_shard,
)
from .defense import DefenseConfig, aggregate
from .errors import TooFewClients
from .metrics import (
    ClientScore,
    ClusterReport,
    attack_success_rate,
    benign_accuracy,
    cluster_cosine,
    label_cosine,
    rank_and_cluster,
)
from .model import MlpArch, TrainConfig, init_params, local_train
from .rng import derive_seed, stream

FLConfig = FLSection
NAN = float("nan")
CALIBRATION_CLIENTS = 20


@dataclass
class RoundRecord:
    round: int
    sampled_ids: tuple = ()
    malicious_ids: tuple = ()
    update_norms: tuple = ()
    update_angles: tuple = ()          # angle of each update to the malicious mean
    background_angles: tuple = ()      # angle of each update to the other benign updates' mean
    global_theta_norm: float = NAN
    dist_to_X: float = NAN
    benign_ac: float = NAN
    attack_sr: float = NAN
    agg_norm: float = 0.0
    mean_benign_angle: float = NAN
    std_benign_angle: float = NAN
    mean_malicious_angle: float = NAN
    bounds: list = field(default_factory=list)
    noop: bool = False

    @property
    def n_sampled(self):
        return len(self.sampled_ids)

    @property
    def n_malicious_sampled(self):
        return len(self.malicious_ids)


@dataclass
class ClientResult:
    client_id: int
    compromised: bool
    benign_ac: float
    attack_sr: float
    cluster: str = ""
    cs_contribution: float = NAN

    @property
    def score(self):
        return self.benign_ac + self.attack_sr


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list
    clients: list
    clusters: list
    theta: np.ndarray
    X: np.ndarray | None
    compromised: tuple
    calibrated_norm: float = NAN

    @property
    def final_attack_sr(self):
        """Mean Attack SR over benign clients with a defined rate."""
        vals = [c.attack_sr for c in self.clients if not c.compromised and not math.isnan(c.attack_sr)]
        return float(np.mean(vals)) if vals else NAN

    @property
    def final_benign_ac(self):
        vals = [c.benign_ac for c in self.clients if not c.compromised]
        return float(np.mean(vals)) if vals else NAN


def load_dataset(cfg):
    d = cfg.data
    if d.source == "idx":
        with open(d.image_path, "rb") as fi, open(d.label_path, "rb") as fl:
            return ingest_idx(fi.read(), fl.read(), d.num_classes)
    meta = DatasetMeta(d.num_classes, d.feature_dim, d.num_samples)
    return generate_synthetic(meta, d.class_separation, derive_seed(cfg.root_seed, "data"), d.noise_std)


def build_trigger(cfg, feature_dim):
    d = cfg.data
    if d.trigger_coords == "auto":
        return TriggerSpec.default(feature_dim, 4, d.trigger_magnitude, d.target_label)
    coords = tuple(int(c) for c in d.trigger_coords.split(","))
    return TriggerSpec(coords, (d.trigger_magnitude,) * len(coords), d.target_label)


def evaluate_personalized(client_id, theta_global, mode, retained):
    """Model used to evaluate ``client_id``: the global one, or under
    ``proximal`` personalization the client's last local model if it has one."""
    if mode == "none":
        return theta_global
    if mode != "proximal":
        raise ValueError(f"unknown personalization {mode!r}")
    return retained.get(client_id, theta_global)


def _angle_or_nan(u, v):
    if not (np.linalg.norm(u) > 0 and np.linalg.norm(v) > 0):
        return NAN
    return theory.angle_between(u, v)


class Simulation:
    def __init__(self, cfg, dataset=None):
        self.cfg = cfg
        root = cfg.root_seed
        d, a = cfg.data, cfg.attack
        self.dataset = dataset if dataset is not None else load_dataset(cfg)
        L = self.dataset.num_classes
        self.arch = MlpArch.build(self.dataset.feature_dim, L, cfg.model.hidden, cfg.model.activation)
        self.train_cfg = TrainConfig(cfg.model.local_lr, cfg.model.local_steps, cfg.model.batch_size)
        self.trigger = build_trigger(cfg, self.dataset.feature_dim)

        part = PartitionConfig(d.alpha, d.num_clients, d.min_samples_per_client,
                               derive_seed(root, "partition"))
        shards = dirichlet_partition(self.dataset, part)
        self.shards = [split_shard(s, stream(root, "split", s.client_id), d.train_frac, d.test_frac)
                       for s in shards]
        N = len(self.shards)

        # kind = none leaves every client benign, whatever the compromised fraction
        k = 0 if a.kind == "none" else AttackConfig(compromised_fraction=a.compromised_fraction).num_compromised(N)
        chosen = stream(root, "compromise").choice(N, size=k, replace=False) if k else []
        self.compromised = tuple(sorted(int(i) for i in chosen))
        comp = set(self.compromised)
        self.shards = [replace(s, compromised=s.client_id in comp) for s in self.shards]
        self.benign_ids = tuple(s.client_id for s in self.shards if not s.compromised)
        self.aux = Dataset.concat([self.shards[i].data for i in self.compromised], L) if k else None
        self.pooled_test = Dataset.concat([self.shards[i].test for i in self.benign_ids], L,
                                          self.dataset.feature_dim)

        self.theta = init_params(self.arch, stream(root, "init"))
        self.retained = {}
        self.prox_mu = cfg.fl.prox_mu

        self.calibrated_norm = NAN
        needs_cal = (a.clip_bound == "auto" or
                     (cfg.defense.kind == "norm_bound" and cfg.defense.norm_M == "auto") or
                     (cfg.defense.kind == "dp" and cfg.defense.dp_clip == "auto"))
        if needs_cal:
            self.calibrated_norm = self._calibrate()

        clip = {"none": None, "auto": self.calibrated_norm}.get(a.clip_bound)
        if clip is None and a.clip_bound not in ("none", "auto"):
            clip = float(a.clip_bound)
        self.attack = AttackConfig(a.kind, a.compromised_fraction, a.psi_low, a.psi_high, clip,
                                   a.upscale_floor, a.mrepl_scale, a.dpois_rate)

        df, q = cfg.defense, cfg.fl.sample_prob
        self.defense = DefenseConfig(
            df.kind, cfg.fl.server_lr,
            krum_f=max(1, math.ceil(q * k - 1e-9)) if df.krum_f == "auto" else int(float(df.krum_f)),
            multikrum_m=df.multikrum_m,
            trim_beta=df.trim_beta,
            norm_M=self.calibrated_norm if df.norm_M == "auto" and df.kind == "norm_bound" else
            (float(df.norm_M) if df.norm_M != "auto" else 1.0),
            noise_sigma=df.noise_sigma,
            dp_clip=self.calibrated_norm if df.dp_clip == "auto" and df.kind == "dp" else
            (float(df.dp_clip) if df.dp_clip != "auto" else 1.0),
            dp_sigma=df.dp_sigma,
            # auto: a strict majority of the expected round size
            rlr_threshold=math.ceil(q * cfg.data.num_clients / 2 - 1e-9) + 1 if df.rlr_threshold == "auto" else int(float(df.rlr_threshold)),
        )

        self.trojan = None
        self.X = None
        if k and a.kind in ("collapois", "mrepl"):
            tcfg = TrojanTrainConfig(a.trojan_lr, a.trojan_batch_size, a.trojan_epochs, a.trojan_max_epochs,
                                     min_attack_sr=a.trojan_min_attack_sr,
                                     min_benign_ac=a.trojan_min_benign_ac)
            # the attacker starts from the initial global model every client receives
            self.trojan = train_trojaned_model(self.arch, self.aux, self.trigger, tcfg,
                                               stream(root, "trojan"), start=self.theta)
            self.X = self.trojan.X
        self.sub_triggers = dict(zip(self.compromised, dba_assign(self.trigger, k))) if k and a.kind == "dba" else {}
        self.n_expected = max(1, round(q * k))
        self.last_malicious = None
        self.records = [self._record(0, [], [], {}, np.zeros_like(self.theta))]

    # ------------------------------------------------------------------
    def _calibrate(self):
        """Median local-update norm of up to 20 benign clients at the initial model."""
        root = self.cfg.root_seed
        norms = []
        for i in self.benign_ids[:CALIBRATION_CLIENTS]:
            _, delta = local_train(self.arch, self.theta, self.shards[i].train, self.train_cfg,
                                   self.prox_mu, stream(root, "calibrate", i))
            norms.append(float(np.linalg.norm(delta)))
        return float(np.median(norms))

    def _sample(self, t):
        root, N, q = self.cfg.root_seed, len(self.shards), self.cfg.fl.sample_prob
        mask = stream(root, "sample", t).random(N) < q
        if not mask.any():
            mask = stream(root, "sample", t, 1).random(N) < q
        return [int(i) for i in np.flatnonzero(mask)]

    def _client_update(self, i, t):
        root = self.cfg.root_seed
        rng = stream(root, "client", i, t)
        shard = self.shards[i]
        kind = self.attack.kind
        if shard.compromised:
            if kind == "collapois":
                return collapois_update(self.X, self.theta, rng, self.attack, i, t)
            if kind == "mrepl":
                return mrepl_update(self.X, self.theta, self.n_expected, self.cfg.fl.server_lr,
                                    self.attack.mrepl_scale, i, t)
            trig = self.sub_triggers[i] if kind == "dba" else self.trigger
            return dpois_update(self.arch, self.theta, shard.train, trig, self.train_cfg, rng,
                                self.attack.dpois_rate, self.prox_mu, i, t)
        final, delta = local_train(self.arch, self.theta, shard.train, self.train_cfg, self.prox_mu, rng)
        if self.cfg.fl.personalization == "proximal":
            self.retained[i] = final
        return ClientUpdate(i, t, delta, False)

    def run_round(self, t):
        """Advance the global model by one round and return its record."""
        sampled = self._sample(t)
        if not sampled:
            rec = self._record(t, [], [], {}, np.zeros_like(self.theta))
            rec.noop = True
            self.records.append(rec)
            return rec
        updates = [self._client_update(i, t) for i in sampled]
        theta_before = self.theta
        agg_cfg = self.defense
        if agg_cfg.kind == "rlr":
            agg_cfg = replace(agg_cfg, rlr_threshold=min(agg_cfg.rlr_threshold, len(updates)))
        agg = aggregate(updates, agg_cfg, stream(self.cfg.root_seed, "defense", t))
        self.theta = theta_before + agg
        local_models = {u.client_id: theta_before + u.delta for u in updates}
        rec = self._record(t, sampled, updates, local_models, agg)
        self.records.append(rec)
        return rec

    def run(self):
        for t in range(1, self.cfg.fl.num_rounds + 1):
            self.run_round(t)
        return self.result()

    # ------------------------------------------------------------------
    def _record(self, t, sampled, updates, local_models, agg):
        mal = [u for u in updates if u.malicious]
        ben = [u for u in updates if not u.malicious]
        rec = RoundRecord(t, tuple(sampled), tuple(u.client_id for u in mal))
        rec.global_theta_norm = float(np.linalg.norm(self.theta))
        rec.agg_norm = float(np.linalg.norm(agg))
        if self.X is not None:
            rec.dist_to_X = float(np.linalg.norm(self.theta - self.X))
        if len(self.pooled_test):
            rec.benign_ac = benign_accuracy(self.arch, self.theta, self.pooled_test)
            rec.attack_sr = attack_success_rate(self.arch, self.theta, self.pooled_test, self.trigger)
        if not updates:
            return rec

        mal_mean = np.mean([u.delta for u in mal], axis=0) if mal else None
        ben_deltas = np.array([u.delta for u in ben]) if ben else np.zeros((0, self.theta.size))
        ben_sum = ben_deltas.sum(axis=0)
        norms, angles, background = [], [], []
        for u in updates:
            norms.append(u.norm)
            angles.append(_angle_or_nan(u.delta, mal_mean) if mal_mean is not None else NAN)
            others = len(ben) - (0 if u.malicious else 1)
            if others > 0:
                rest = ben_sum - (0.0 if u.malicious else u.delta)
                background.append(_angle_or_nan(u.delta, rest / others))
            else:
                background.append(NAN)
        rec.update_norms, rec.update_angles, rec.background_angles = tuple(norms), tuple(angles), tuple(background)
        if mal_mean is not None and np.linalg.norm(mal_mean) > 0:
            mal_angles = [a for a, u in zip(angles, updates) if u.malicious and not math.isnan(a)]
            rec.mean_malicious_angle = float(np.mean(mal_angles)) if mal_angles else NAN
            if ben and any(np.linalg.norm(u.delta) > 0 for u in ben):
                st = theory.angle_stats(ben, mal_mean, t)
                rec.mean_benign_angle, rec.std_benign_angle = st.mean, st.std

        if self.X is not None and self.cfg.theory.log_bounds:
            rec.bounds = self._bounds(t, mal, ben, local_models)
        return rec

    def _bounds(self, t, mal, ben, local_models):
        th = self.cfg.theory
        out = []
        if mal:
            self.last_malicious = mal[-1].delta
        if self.last_malicious is not None:
            rep, zeta = theory.convergence_bound_check(self.theta, self.X, self.last_malicious,
                                                       self.attack.psi_low, th.zeta_eps)
            out.append(rep)
            out.append(theory.BoundReport("zeta_proxy", None, zeta, th.zeta_eps))
        if mal:
            true, false = theory.detected_set([u.client_id for u in mal], [u.client_id for u in ben],
                                              th.detect_precision, stream(self.cfg.root_seed, "detect", t))
            updates = {u.client_id: u.delta for u in mal + ben}
            rep = theory.estimation_error_bounds(true, false, updates, local_models, self.X,
                                                 th.detect_precision, self.attack.psi_high,
                                                 stream(self.cfg.root_seed, "subsets", t))
            out.append(rep)
            k = len(true) + len(false)
            low = theory.corrected_estimation_lower(true, updates, th.detect_precision,
                                                    self.attack.psi_high, k) if true else 0.0
            out.append(theory.BoundReport("estimation_error_corrected", low, rep.observed,
                                          rep.upper, rep.sampled))
        return out

    # ------------------------------------------------------------------
    def evaluate_clients(self):
        mode = self.cfg.fl.personalization
        results = []
        for s in self.shards:
            params = evaluate_personalized(s.client_id, self.theta, mode, self.retained)
            ac = benign_accuracy(self.arch, params, s.test)
            sr = attack_success_rate(self.arch, params, s.test, self.trigger)
            cs = label_cosine(s, self.aux) if self.aux is not None else NAN
            results.append(ClientResult(s.client_id, s.compromised, ac, sr, "", cs))
        scores = [ClientScore(c.client_id, c.benign_ac, c.attack_sr)
                  for c in results if not c.compromised and not math.isnan(c.attack_sr)]
        clusters = []
        try:
            reports = rank_and_cluster(scores)
        except TooFewClients:
            reports = []
        label_of = {}
        for rep in reports:
            cs = NAN
            if rep.members and self.aux is not None:
                cs = cluster_cosine([self.shards[i] for i in rep.members], self.aux)
            clusters.append(ClusterReport(rep.label, rep.members, rep.mean_attack_sr, rep.mean_benign_ac, cs))
            label_of.update({i: rep.label for i in rep.members})
        for c in results:
            if c.compromised:
                c.cluster = "compromised"
            else:
                c.cluster = label_of.get(c.client_id, "unranked")
        return results, clusters

    def result(self):
        clients, clusters = self.evaluate_clients()
        return RunResult(self.cfg, self.records, clients, clusters, self.theta.copy(),
                         None if self.X is None else self.X.copy(), self.compromised,
                         self.calibrated_norm)


def run_round(sim, t):
    return sim.run_round(t)


def run_experiment(cfg, dataset=None):
    """Run every round of ``cfg`` and evaluate all clients at the end."""
    return Simulation(cfg, dataset).run()
