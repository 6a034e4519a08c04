import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedpois.data import (
    ClientShard,
    Dataset,
    DatasetMeta,
    PartitionConfig,
    TriggerSpec,
    cumulative_label_distribution,
    dirichlet_partition,
    generate_synthetic,
    ingest_idx,
    largest_remainder,
    poison,
    sample_dirichlet,
    shards_from_text,
    shards_to_text,
    split_counts,
    split_shard,
    write_idx,
)
from fedpois.errors import CountMismatch, EmptyShard, ExhaustedRetries, MagicMismatch, TruncatedFile
from fedpois.rng import derive_seed, stream


def toy(n=200, L=4, d=6, seed=0):
    return generate_synthetic(DatasetMeta(L, d, n), 4.0, seed, noise_std=0.5)


# ---------------------------------------------------------------- seeds

def test_streams_are_reproducible_and_separate():
    a = stream(7, "client", 3, 12).random(4)
    b = stream(7, "client", 3, 12).random(4)
    c = stream(7, "client", 12, 3).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert derive_seed(1, "x") != derive_seed(2, "x")
    assert derive_seed(1, "x") != derive_seed(1, "y")


# ---------------------------------------------------------------- synthetic

def test_synthetic_class_means_form_a_simplex():
    ds = generate_synthetic(DatasetMeta(4, 10, 40000), 4.0, 1, noise_std=0.3)
    means = np.stack([ds.x[ds.y == j].mean(axis=0) for j in range(4)])
    dists = [np.linalg.norm(means[i] - means[j]) for i in range(4) for j in range(i + 1, 4)]
    assert np.allclose(dists, 4.0, atol=0.05)
    # features beyond the first L - 1 carry only noise
    assert np.abs(means[:, 3:]).max() < 0.02


def test_synthetic_labels_balanced_and_deterministic():
    a, b = toy(seed=3), toy(seed=3)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert set(a.label_histogram()) == {50}


def test_synthetic_rejects_too_few_dims():
    with pytest.raises(ValueError):
        generate_synthetic(DatasetMeta(5, 3, 10), 1.0, 0)


# ---------------------------------------------------------------- idx

def test_idx_round_trip_and_scaling():
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
    labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
    img_b, lab_b = write_idx(imgs, labels)
    ds = ingest_idx(img_b, lab_b, num_classes=3)
    assert ds.x.shape == (5, 12)
    assert np.allclose(ds.x * 255.0, imgs.reshape(5, 12))
    assert np.array_equal(ds.y, labels)


def test_idx_header_is_big_endian():
    img_b, lab_b = write_idx(np.zeros((2, 1, 1), np.uint8), np.zeros(2, np.uint8))
    assert img_b[:4] == b"\x00\x00\x08\x03" and lab_b[:4] == b"\x00\x00\x08\x01"
    assert img_b[4:8] == b"\x00\x00\x00\x02"


def test_idx_errors():
    img_b, lab_b = write_idx(np.zeros((3, 2, 2), np.uint8), np.zeros(3, np.uint8))
    with pytest.raises(MagicMismatch):
        ingest_idx(lab_b, lab_b)
    with pytest.raises(TruncatedFile):
        ingest_idx(img_b[:-1], lab_b)
    _, short = write_idx(np.zeros((2, 2, 2), np.uint8), np.zeros(2, np.uint8))
    with pytest.raises(CountMismatch):
        ingest_idx(img_b, short)


# ---------------------------------------------------------------- partition

def test_largest_remainder_ties_go_to_lower_index():
    assert list(largest_remainder(10, [1, 1, 1])) == [4, 3, 3]
    assert largest_remainder(7, [0.2, 0.5, 0.3]).sum() == 7


@settings(max_examples=40, deadline=None)
@given(total=st.integers(0, 500), w=st.lists(st.floats(0.01, 10), min_size=1, max_size=8))
def test_largest_remainder_sums_and_stays_within_one(total, w):
    out = largest_remainder(total, w)
    raw = total * np.array(w) / np.sum(w)
    assert out.sum() == total
    assert np.all(np.abs(out - raw) < 1.0)


def test_dirichlet_sampler_finite_for_tiny_alpha():
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = sample_dirichlet(rng, 1e-3, 5)
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12


def test_dirichlet_sampler_mean_matches_symmetric_dirichlet():
    rng = np.random.default_rng(1)
    draws = np.stack([sample_dirichlet(rng, 2.0, 4) for _ in range(4000)])
    # Dir(2,2,2,2): mean 1/4, variance (1/4)(3/4)/(8+1)
    assert np.allclose(draws.mean(axis=0), 0.25, atol=0.01)
    assert np.allclose(draws.var(axis=0), 0.25 * 0.75 / 9, rtol=0.1)


@settings(max_examples=20, deadline=None)
@given(alpha=st.sampled_from([0.05, 0.5, 5.0, 50.0]), n_clients=st.integers(1, 12), seed=st.integers(0, 1000))
def test_partition_is_an_exact_cover(alpha, n_clients, seed):
    ds = toy(seed=seed % 7)
    shards = dirichlet_partition(ds, PartitionConfig(alpha, n_clients, 2, seed))
    assert len(shards) == n_clients
    assert sum(len(s) for s in shards) == len(ds)
    assert all(len(s) >= 2 for s in shards)
    assert np.array_equal(sum(s.label_histogram for s in shards), ds.label_histogram())


def test_partition_skew_grows_as_alpha_shrinks():
    ds = toy(n=4000)

    def skew(alpha):
        shards = dirichlet_partition(ds, PartitionConfig(alpha, 20, 2, 0))
        return np.mean([s.label_histogram.max() / len(s) for s in shards])

    assert skew(0.05) > skew(1.0) > skew(100.0)


def test_partition_impossible_minimum_raises():
    with pytest.raises(ExhaustedRetries):
        dirichlet_partition(toy(n=20), PartitionConfig(1.0, 10, 5, 0))


def test_split_counts():
    assert split_counts(100) == (70, 15, 15)
    assert split_counts(2)[1] == 1
    for n in range(2, 60):
        tr, te, va = split_counts(n)
        assert tr >= 1 and te >= 1 and tr + te + va == n


def test_split_shard_partitions_the_shard():
    ds = toy(n=40)
    shard = split_shard(ClientShard(0, ds), np.random.default_rng(0))
    rows = np.concatenate([shard.train.x, shard.test.x, shard.val.x])
    assert rows.shape == ds.x.shape
    assert {tuple(r) for r in rows} == {tuple(r) for r in ds.x}


# ---------------------------------------------------------------- trigger / poison

def test_trigger_is_additive_and_pure():
    trig = TriggerSpec((1, 3), (0.5, -1.0), target_label=2)
    x = np.zeros((2, 4))
    out = trig.apply(x)
    assert np.array_equal(out[:, 1], [0.5, 0.5]) and np.array_equal(out[:, 3], [-1.0, -1.0])
    assert not x.any()


def test_poison_full_fraction_keeps_order_and_relabels():
    ds = toy(n=10)
    trig = TriggerSpec.default(ds.feature_dim, 2, 1.0, target_label=3)
    out = poison(ds, trig, 1.0)
    assert np.allclose(out.x, trig.apply(ds.x))
    assert np.all(out.y == 3)
    assert np.array_equal(ds.y, toy(n=10).y)


def test_poison_fraction_size_and_twice_is_additive():
    ds = toy(n=40)
    trig = TriggerSpec.default(ds.feature_dim)
    assert len(poison(ds, trig, 0.25, np.random.default_rng(0))) == 10
    twice = poison(poison(ds, trig, 1.0), trig, 1.0)
    assert np.allclose(twice.x[:, -1] - ds.x[:, -1], 2 * trig.pattern[-1])


def test_cumulative_label_distribution():
    ds = Dataset(np.zeros((5, 1)), [0, 2, 2, 1, 2], 4)
    assert list(cumulative_label_distribution(ds)) == [1, 2, 5, 5]
    with pytest.raises(EmptyShard):
        cumulative_label_distribution(ds.subset([]))


def test_shard_text_round_trip():
    ds = toy(n=30)
    shards = dirichlet_partition(ds, PartitionConfig(1.0, 3, 2, 0))
    back = shards_from_text(shards_to_text(shards), 4)
    for a, b in zip(shards, back):
        assert a.client_id == b.client_id
        assert np.array_equal(a.data.x, b.data.x) and np.array_equal(a.data.y, b.data.y)


def test_two_point_classes_are_linearly_separable():
    ds = generate_synthetic(DatasetMeta(2, 2, 4), 10.0, 7)
    assert list(ds.label_histogram()) == [2, 2]
    # closed-form LDA: w = S^-1 (m1 - m0), threshold at the midpoint
    m0, m1 = ds.x[ds.y == 0].mean(axis=0), ds.x[ds.y == 1].mean(axis=0)
    centred = np.concatenate([ds.x[ds.y == 0] - m0, ds.x[ds.y == 1] - m1])
    w = np.linalg.pinv(centred.T @ centred + 1e-9 * np.eye(2)) @ (m1 - m0)
    pred = (ds.x - (m0 + m1) / 2) @ w > 0
    assert np.array_equal(pred.astype(int), ds.y)


def test_huge_alpha_splits_evenly():
    ds = Dataset(np.zeros((400, 1)), np.repeat([0, 1], 200), 2)
    for seed in range(100):
        for s in dirichlet_partition(ds, PartitionConfig(1e6, 2, 2, seed)):
            assert np.all(np.abs(s.label_histogram - 100) <= 5)


def test_tiny_alpha_concentrates_on_one_class():
    ds = toy(n=2000)
    shares = []
    for seed in range(100):
        shards = dirichlet_partition(ds, PartitionConfig(0.01, 20, 2, seed))
        shares.append(np.mean([s.label_histogram.max() / len(s) for s in shards]))
    assert np.mean(shares) > 0.9
