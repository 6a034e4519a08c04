"""Population- and client-level evaluation.

Covers clean accuracy, backdoor success rate, the per-client score used to
rank infected clients, the top-k clustering with its cumulative-label cosine
similarity, and a battery of two-sample tests used to judge whether malicious
updates stand out from benign ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .data import cumulative_label_distribution
from .errors import EmptyCluster, EmptyTestSplit, InsufficientSamples, TooFewClients
from .model import predict

CLUSTERS = ("top1", "top25", "top50", "bottom50")
_CLUSTER_CUTS = (0.01, 0.25, 0.50)


def benign_accuracy(arch, params, data):
    if data is None or len(data) == 0:
        raise EmptyTestSplit("benign accuracy needs a non-empty test split")
    return float(np.mean(predict(arch, params, data.x) == data.y))


def attack_success_rate(arch, params, data, trig, exclude_target=True):
    """Share of triggered test samples classified as the target label.

    Samples already labelled with the target are left out by default; if
    nothing is left the rate is undefined and ``nan`` is returned.
    """
    if data is None or len(data) == 0:
        raise EmptyTestSplit("attack success rate needs a non-empty test split")
    x, y = data.x, data.y
    if exclude_target:
        keep = y != trig.target_label
        if not keep.any():
            return float("nan")
        x = x[keep]
    pred = predict(arch, params, trig.apply(x))
    return float(np.mean(pred == trig.target_label))


@dataclass(frozen=True)
class ClientScore:
    client_id: int
    benign_ac: float
    attack_sr: float

    @property
    def score(self):
        return self.benign_ac + self.attack_sr


@dataclass(frozen=True)
class ClusterReport:
    label: str
    members: tuple
    mean_attack_sr: float
    mean_benign_ac: float
    cs: float = float("nan")


def cluster_sizes(n):
    """Sizes of the top1 / top25 / top50 / bottom50 groups for ``n`` clients."""
    bounds = [min(n, math.ceil(c * n - 1e-9)) for c in _CLUSTER_CUTS]
    sizes, prev = [], 0
    for b in bounds:
        b = max(b, prev)
        sizes.append(b - prev)
        prev = b
    sizes.append(n - prev)
    return sizes


def rank_and_cluster(scores):
    """Sort clients by score (desc, ties by id) and cut into disjoint groups.

    Each group holds the clients inside its cumulative top-k% that are not in
    an earlier group.
    """
    scores = list(scores)
    if len(scores) < 4:
        raise TooFewClients(f"clustering needs at least 4 clients, got {len(scores)}")
    ranked = sorted(scores, key=lambda s: (-s.score, s.client_id))
    reports, pos = [], 0
    for label, size in zip(CLUSTERS, cluster_sizes(len(ranked))):
        group = ranked[pos: pos + size]
        pos += size
        reports.append(ClusterReport(
            label,
            tuple(s.client_id for s in group),
            float(np.mean([s.attack_sr for s in group])) if group else float("nan"),
            float(np.mean([s.benign_ac for s in group])) if group else float("nan"),
        ))
    return reports


def cosine(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def label_cosine(shard, aux):
    return cosine(cumulative_label_distribution(shard), cumulative_label_distribution(aux))


def cluster_cosine(shards, aux):
    """Mean cosine between members' cumulative label distributions and ``aux``'s."""
    shards = list(shards)
    if not shards:
        raise EmptyCluster("cluster has no members")
    return float(np.mean([label_cosine(s, aux) for s in shards]))


# ----------------------------------------------------------------------------
# two-sample statistics
# ----------------------------------------------------------------------------

def welch_t(a, b):
    """Welch's t-test: (t, Welch-Satterthwaite df, two-sided p)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    diff = a.mean() - b.mean()
    if se2 == 0:
        return (0.0, float("nan"), 1.0) if diff == 0 else (math.copysign(math.inf, diff), float("nan"), 0.0)
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = special.betainc(df / 2.0, 0.5, df / (df + t * t))
    return float(t), float(df), float(p)


def _f_sf(f, d1, d2):
    if f <= 0:
        return 1.0
    return float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


def levene_median(a, b):
    """Brown-Forsythe (median-centred) Levene test: (W, p)."""
    groups = [np.abs(g - np.median(g)) for g in (np.asarray(a, float), np.asarray(b, float))]
    n = sum(g.size for g in groups)
    grand = np.concatenate(groups).mean()
    between = sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    k = len(groups)
    if within == 0:
        return (0.0, 1.0) if between == 0 else (math.inf, 0.0)
    w = (n - k) / (k - 1) * between / within
    return float(w), _f_sf(w, k - 1, n - k)


def kolmogorov_sf(lam, terms=100):
    """Survival function of the Kolmogorov distribution."""
    if lam <= 0:
        return 1.0
    if lam < 0.2:
        # series converges slowly here; the value is 1 to double precision
        return 1.0
    k = np.arange(1, terms + 1)
    s = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * lam * lam))
    return float(min(1.0, max(0.0, s)))


def ks_2samp(a, b):
    """Two-sample KS statistic with the asymptotic Kolmogorov p-value."""
    a, b = np.sort(np.asarray(a, float)), np.sort(np.asarray(b, float))
    pts = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pts, side="right") / a.size
    cdf_b = np.searchsorted(b, pts, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = a.size * b.size / (a.size + b.size)
    return d, kolmogorov_sf(math.sqrt(en) * d)


def three_sigma_outside(reference, values):
    """Boolean mask: ``values`` outside mean(reference) +- 3 std(reference)."""
    ref = np.asarray(reference, float)
    mu, sd = ref.mean(), ref.std(ddof=1)
    return np.abs(np.asarray(values, float) - mu) > 3.0 * sd


def stealth_battery(benign_angles, malicious_angles, benign_norms, malicious_norms):
    """Compare malicious against benign update features.

    Angles and norms are paired per update. Returns p-values of Welch's t,
    median-centred Levene and two-sample KS for each feature, the 3-sigma
    outlier share per feature, and the share of malicious updates flagged on
    either feature.
    """
    feats = {
        "angle": (np.asarray(benign_angles, float), np.asarray(malicious_angles, float)),
        "norm": (np.asarray(benign_norms, float), np.asarray(malicious_norms, float)),
    }
    for name, (ben, mal) in feats.items():
        if ben.size < 2 or mal.size < 2:
            raise InsufficientSamples(f"{name}: need at least 2 benign and 2 malicious values")
    if feats["angle"][1].size != feats["norm"][1].size:
        raise ValueError("malicious angles and norms must be paired")
    report = {}
    flagged = np.zeros(feats["angle"][1].size, dtype=bool)
    for name, (ben, mal) in feats.items():
        t, _, p_t = welch_t(ben, mal)
        _, p_l = levene_median(ben, mal)
        d, p_ks = ks_2samp(ben, mal)
        out = three_sigma_outside(ben, mal)
        flagged |= out
        report.update({
            f"{name}_welch_t": t,
            f"{name}_welch_p": p_t,
            f"{name}_levene_p": p_l,
            f"{name}_ks_stat": d,
            f"{name}_ks_p": p_ks,
            f"{name}_three_sigma": float(out.mean()),
        })
    report["three_sigma_any"] = float(flagged.mean())
    report["n_benign"] = int(feats["angle"][0].size)
    report["n_malicious"] = int(feats["angle"][1].size)
    return report
