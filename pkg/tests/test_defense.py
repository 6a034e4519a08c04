import itertools
import math
import warnings

import numpy as np
import pytest

from fedpois.attacks import ClientUpdate
from fedpois.defense import (
    DefenseConfig,
    aggregate,
    coordinate_median,
    dp_aggregate,
    fedavg,
    krum,
    norm_bound,
    robust_lr,
    trimmed_mean,
)
from fedpois.errors import EmptyRound, OvertrimmedRound


def ups(vectors):
    return [ClientUpdate(i, 0, np.asarray(v, float)) for i, v in enumerate(vectors)]


# brute-force references written without the library's vectorisation

def ref_krum(vectors, f, m):
    n = len(vectors)
    k = min(n - 1, max(1, n - f - 2)) if n > 1 else 0
    scored = []
    for i in range(n):
        d = sorted(sum((a - b) ** 2 for a, b in zip(vectors[i], vectors[j])) for j in range(n) if j != i)
        scored.append((sum(d[:k]), i))
    chosen = [i for _, i in sorted(scored)[: max(1, min(m, n))]]
    dim = len(vectors[0])
    return [sum(vectors[i][c] for i in chosen) / len(chosen) for c in range(dim)]


def ref_median(vectors):
    out = []
    for c in range(len(vectors[0])):
        col = sorted(v[c] for v in vectors)
        n = len(col)
        out.append(col[n // 2] if n % 2 else (col[n // 2 - 1] + col[n // 2]) / 2)
    return out


def ref_trimmed(vectors, beta):
    n = len(vectors)
    k = math.floor(beta * n)
    return [sum(sorted(v[c] for v in vectors)[k: n - k]) / (n - 2 * k) for c in range(len(vectors[0]))]


def test_brute_force_oracles_200_instances():
    rng = np.random.default_rng(0)
    warnings.simplefilter("ignore")
    for _ in range(200):
        n, d = rng.integers(1, 7), rng.integers(1, 5)
        vecs = [list(rng.integers(-3, 4, size=d).astype(float)) for _ in range(n)]
        u = ups(vecs)
        f = int(rng.integers(0, 3))
        m = int(rng.integers(1, 4))
        assert np.array_equal(krum(u, f, 1), ref_krum(vecs, f, 1))
        assert np.array_equal(krum(u, f, m), ref_krum(vecs, f, m))
        assert np.array_equal(coordinate_median(u), ref_median(vecs))
        beta = float(rng.choice([0.0, 0.1, 0.2, 0.3, 0.49]))
        assert np.allclose(trimmed_mean(u, beta), ref_trimmed(vecs, beta), rtol=0, atol=1e-12)


def test_aggregation_ignores_arrival_order():
    rng = np.random.default_rng(1)
    u = ups(rng.standard_normal((6, 3)))
    rev = list(reversed(u))
    for kind in ("fedavg", "krum", "multikrum", "median", "trimmed_mean", "norm_bound", "rlr"):
        c = DefenseConfig(kind, krum_f=1, multikrum_m=3, trim_beta=0.2)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert np.array_equal(aggregate(u, c), aggregate(rev, c))


def test_fedavg_and_empty_round():
    u = ups([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(fedavg(u), [2.0, 3.0])
    assert np.array_equal(fedavg(u, 0.5), [1.0, 1.5])
    with pytest.raises(EmptyRound):
        fedavg([])


def test_krum_rejects_outlier_and_warns_when_small():
    u = ups([[0.0], [0.1], [-0.1], [0.05], [100.0]])
    assert abs(krum(u, 1)[0]) < 0.2
    with pytest.warns(UserWarning):
        krum(ups([[0.0], [1.0]]), 1)


def test_trimmed_mean_overtrim():
    with pytest.raises(OvertrimmedRound):
        trimmed_mean(ups([[1.0], [2.0]]), 0.5)
    with pytest.raises(ValueError):
        DefenseConfig("trimmed_mean", trim_beta=0.5)


def test_norm_bound_and_dp():
    u = ups([[3.0, 4.0], [0.3, 0.4]])
    assert np.allclose(norm_bound(u, 1.0), [(0.6 + 0.3) / 2, (0.8 + 0.4) / 2])
    assert np.allclose(dp_aggregate(u, 1.0, 0.0), norm_bound(u, 1.0))
    # noise on the clipped sum has std sigma * C, so the mean's std is sigma * C / n
    rng = np.random.default_rng(0)
    z = np.stack([dp_aggregate(ups([[0.0] * 4] * 4), 2.0, 0.5, rng) for _ in range(4000)])
    assert abs(z.std() - 0.5 * 2.0 / 4) < 0.01


def test_robust_lr_flips_weak_coordinates():
    u = ups([[1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])
    out = robust_lr(u, threshold=2)
    mean = np.array([1.0, 1.0 / 3])
    assert np.allclose(out, [mean[0], -mean[1]])
    assert np.allclose(robust_lr(u, threshold=1), mean)
    # an exact tie counts as weak agreement
    assert np.allclose(robust_lr(ups([[1.0], [-1.0]]), 1), [0.0])


def test_dispatch_applies_server_rate():
    u = ups([[2.0], [4.0], [6.0]])
    assert aggregate(u, DefenseConfig("median", server_lr=0.5))[0] == 2.0
    assert aggregate(u, DefenseConfig("fedavg", server_lr=0.5))[0] == 2.0


def test_krum_examples():
    u = ups([[1.0, 0.0], [1.1, 0.0], [0.9, 0.1], [1.0, -0.1], [100.0, 0.0]])
    out = krum(u, 1, 1)
    assert np.linalg.norm(out - [1.0, 0.0]) < 0.2
    # two equally tight pairs score the same; the lowest client id wins
    pairs = [ClientUpdate(i, 0, np.array(v)) for i, v in
             [(3, [10.0, 0.0]), (2, [10.0, 1.0]), (1, [0.0, 1.0]), (0, [0.0, 0.0])]]
    assert np.array_equal(krum(pairs, 0, 1), [0.0, 0.0])


def test_median_and_trim_ignore_two_large_values():
    eps = 1e-3
    u = ups([[1 - eps], [1.0], [1 + eps], [100.0], [100.0]])
    assert coordinate_median(u)[0] <= 1 + eps
    assert trimmed_mean(u, 0.4)[0] <= 1 + eps


def test_single_client_noise_calibration():
    vals = np.array([norm_bound(ups([[0.0] * 3]), 1.0, 0.7, np.random.default_rng(s)) for s in range(1000)])
    assert abs(vals.std() - 0.7) / 0.7 < 0.05
    again = norm_bound(ups([[0.0] * 3]), 1.0, 0.7, np.random.default_rng(3))
    assert np.array_equal(again, vals[3])


def test_dp_noise_variance_per_coordinate():
    n = 4
    vals = np.array([dp_aggregate(ups([[0.0] * 5] * n), 1.0, 1.0, np.random.default_rng(s)) for s in range(1000)])
    assert abs(vals.var() - 1 / n ** 2) / (1 / n ** 2) < 0.10
