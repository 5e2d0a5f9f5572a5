import math

import numpy as np
import pytest

from glister.data import Dataset, SplitSpec, discretize_features, gen_synthetic, split
from glister.numerics import SeededRng
from glister.submodular import (
    MatroidQuota,
    exhaustive_max,
    facility_location,
    from_callable,
    kmeans,
    lazy_greedy,
    lr_submodular,
    naive_greedy,
    nb_feature_function,
    randomized_greedy,
    stochastic_greedy,
)


def modular_oracle(weights, labels=None):
    w = np.asarray(weights, dtype=float)
    return from_callable(len(w), lambda s: float(sum(w[i] for i in s)), True, labels)


def random_fl(seed, n=12, per_class=False):
    rng = SeededRng(seed)
    pts = rng.normals(2 * n).reshape(n, 2) * 2
    labels = np.array([rng.randint(2) for _ in range(n)])
    return facility_location(pts, labels, per_class=per_class), labels


def test_naive_greedy_modular_topk():
    f = modular_oracle([1.0, 5.0, 3.0, 2.0, 4.0])
    assert naive_greedy(f, 3) == [1, 4, 2]


def test_naive_greedy_k_equals_n():
    f = modular_oracle([1.0, 2.0, 3.0])
    assert sorted(naive_greedy(f, 3)) == [0, 1, 2]


def test_naive_greedy_tie_breaks_lowest_index():
    f = modular_oracle([2.0, 2.0, 2.0, 1.0])
    assert naive_greedy(f, 2) == [0, 1]


def test_naive_greedy_ratio_facility_location():
    f, _ = random_fl(1)
    sel = naive_greedy(f, 4)
    _, opt = exhaustive_max(f, 4)
    assert f.value(sel) >= (1 - 1 / math.e) * opt


def test_lazy_equals_naive_on_50_instances():
    for seed in range(50):
        f, _ = random_fl(seed + 10)
        assert list(lazy_greedy(f, 4)) == naive_greedy(f, 4)


def test_lazy_modular_one_eval_per_pick_after_first_round():
    f = modular_oracle([5.0, 4.0, 3.0, 2.0, 1.0, 0.5])
    sel = lazy_greedy(f, 3)
    # n initial evaluations plus one refresh per later pick
    assert sel.evaluations == f.n + 2


def test_lazy_k_zero():
    f = modular_oracle([1.0, 2.0])
    assert list(lazy_greedy(f, 0)) == []


def test_stochastic_greedy_tiny_epsilon_matches_naive():
    f, _ = random_fl(3)
    naive = naive_greedy(f, 4)
    # sample size (n/k) ln(1/eps) >= n forces full candidate coverage
    assert stochastic_greedy(f, 4, 1e-12, SeededRng(0)) == naive


def test_stochastic_greedy_deterministic():
    f, _ = random_fl(4)
    a = stochastic_greedy(f, 4, 0.2, SeededRng(9))
    b = stochastic_greedy(f, 4, 0.2, SeededRng(9))
    assert a == b


def test_stochastic_greedy_mean_quality():
    rng = SeededRng(7)
    pts = rng.normals(200).reshape(100, 2) * 3
    f = facility_location(pts)
    base = f.value(naive_greedy(f, 10))
    vals = [
        f.value(stochastic_greedy(f, 10, 0.01, SeededRng(s))) for s in range(20)
    ]
    assert np.mean(vals) >= 0.9 * base


def test_randomized_greedy_k1_picks_best():
    f = modular_oracle([1.0, 9.0, 3.0])
    assert randomized_greedy(f, 1, SeededRng(0)) == [1]


def test_randomized_greedy_exact_cardinality_with_negative_gains():
    w = np.array([3.0, 1.0, -2.0, -5.0])
    f = modular_oracle(w)
    for s in range(10):
        sel = randomized_greedy(f, 4, SeededRng(s))
        assert len(sel) == 4 and len(set(sel)) == 4


def test_randomized_greedy_nonmonotone_mean_ratio():
    rng = SeededRng(17)
    mod = rng.uniforms(10) * 4
    cut = np.abs(rng.normals(100)).reshape(10, 10) * 0.15
    cut = (cut + cut.T) / 2

    def value(s):
        s = list(s)
        return float(sum(mod[i] for i in s) - sum(cut[i, j] for i in s for j in s))

    f = from_callable(10, value, False)
    _, opt = exhaustive_max(f, 4)
    vals = [f.value(randomized_greedy(f, 4, SeededRng(s))) for s in range(50)]
    assert np.mean(vals) >= opt / math.e


def test_exhaustive_modular():
    f = modular_oracle([1.0, 2.0, 3.0, 4.0])
    subset, value = exhaustive_max(f, 2)
    assert set(subset) == {2, 3} and value == 7.0


def test_exhaustive_at_least_greedy():
    f, _ = random_fl(21)
    sel = naive_greedy(f, 4)
    _, opt = exhaustive_max(f, 4)
    assert opt >= f.value(sel) - 1e-12


def test_exhaustive_budget_guard():
    f = modular_oracle(np.ones(60))
    with pytest.raises(ValueError, match="budget"):
        exhaustive_max(f, 30)


def test_exhaustive_with_quota_cross_class_pair():
    f, labels = random_fl(31)
    quota = MatroidQuota({0: 1, 1: 1})
    subset, value = exhaustive_max(f, 2, quota)
    assert sorted(labels[list(subset)].tolist()) == [0, 1]
    best = -math.inf
    import itertools

    for pair in itertools.combinations(range(f.n), 2):
        if sorted(labels[list(pair)].tolist()) == [0, 1]:
            best = max(best, f.value(pair))
    assert value == pytest.approx(best)


def test_quota_from_proportions_sums_to_k():
    labels = np.array([0] * 50 + [1] * 30 + [2] * 20)
    quota = MatroidQuota.from_proportions(labels, 3, 10)
    assert quota.total == 10
    assert quota.per_class == {0: 5, 1: 3, 2: 2}


def test_quota_largest_remainder_correction():
    labels = np.array([0, 0, 1, 1, 2, 2])
    quota = MatroidQuota.from_proportions(labels, 3, 4)
    assert quota.total == 4


def test_greedy_quota_exact_counts():
    f, labels = random_fl(41, per_class=False)
    quota = MatroidQuota.from_proportions(labels, 2, 4)
    sel = naive_greedy(f, 4, quota)
    counts = np.bincount(labels[sel], minlength=2)
    assert {c: int(counts[c]) for c in quota.per_class} == quota.per_class
    assert list(lazy_greedy(f, 4, quota)) == sel


def test_greedy_quota_infeasible():
    f, labels = random_fl(43)
    n1 = int((labels == 1).sum())
    quota = MatroidQuota({0: 0, 1: n1 + 1}) if n1 + 1 <= f.n else MatroidQuota({1: f.n})
    with pytest.raises(ValueError):
        naive_greedy(f, quota.total, quota)


def test_facility_location_identical_points():
    pts = np.ones((4, 2))
    f = facility_location(pts)
    assert f.value(range(4)) == 0.0  # max distance is 0, so the cap is 0


def test_facility_location_two_points():
    pts = np.array([[0.0, 0.0], [3.0, 4.0]])
    f = facility_location(pts)
    assert f.value([0]) == pytest.approx(25.0)  # covers itself at d_max + other at 0


def test_facility_location_marginal_identity():
    f, _ = random_fl(51)
    rng = SeededRng(3)
    for _ in range(30):
        size = rng.randint(6)
        s = [int(v) for v in rng.choice_no_replace(f.n, size)]
        rest = [e for e in range(f.n) if e not in s]
        e = rest[rng.randint(len(rest))]
        direct = f.value(s + [e]) - f.value(s)
        assert f.marginal(e, s) == pytest.approx(direct, abs=1e-9)


def test_facility_location_per_class_uncovered_contributes_zero():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    labels = np.array([0, 0, 1])
    f = facility_location(pts, labels, per_class=True)
    # selecting only class-0 rows leaves the class-1 row uncovered; each
    # selected row covers itself at the d_max similarity cap
    v = f.value([0, 1])
    d = ((pts[:, None] - pts[None, :]) ** 2).sum(-1)
    assert v == pytest.approx(2 * d.max())
    assert f.value([0, 1, 2]) == pytest.approx(3 * d.max())


def test_diminishing_returns_all_oracles():
    rng = SeededRng(77)
    full = gen_synthetic("separable-2", 30, seed=5)
    train, val, _ = split(full, SplitSpec(0.6, 0.2, 0.2, seed=1))
    train_b, val_b = discretize_features(train, (val,), bins=6)
    oracles = [
        random_fl(61)[0],
        facility_location(train.features, train.labels, per_class=True),
        nb_feature_function(train_b, val_b),
        lr_submodular(train.take(range(12)), val, m_clusters=3, seed=2),
    ]
    for f in oracles:
        for _ in range(100):
            size_y = 1 + rng.randint(min(10, f.n - 1))
            y_set = [int(v) for v in rng.choice_no_replace(f.n, size_y)]
            x_set = y_set[: rng.randint(len(y_set) + 1)]
            rest = [i for i in range(f.n) if i not in y_set]
            e = rest[rng.randint(len(rest))]
            assert f.marginal(e, x_set) >= f.marginal(e, y_set) - 1e-9


def test_monotone_oracles_nonnegative_marginals():
    rng = SeededRng(88)
    full = gen_synthetic("separable-2", 30, seed=6)
    train, val, _ = split(full, SplitSpec(0.6, 0.2, 0.2, seed=1))
    train_b, val_b = discretize_features(train, (val,), bins=6)
    for f in (random_fl(71)[0], nb_feature_function(train_b, val_b)):
        for _ in range(50):
            size = rng.randint(8)
            s = [int(v) for v in rng.choice_no_replace(f.n, size)]
            rest = [e for e in range(f.n) if e not in s]
            e = rest[rng.randint(len(rest))]
            assert f.marginal(e, s) >= -1e-9


def test_nb_empty_set_value_is_smoothing_floor():
    full = gen_synthetic("separable-2", 20, seed=7)
    train, val, _ = split(full, SplitSpec(0.5, 0.25, 0.25, seed=1))
    train_b, val_b = discretize_features(train, (val,), bins=5)
    f = nb_feature_function(train_b, val_b)
    expect = val_b.n * val_b.d * math.log(1e-2)
    assert f.value([]) == pytest.approx(expect)


def test_nb_identical_rows_marginal_strictly_decreases():
    feats = np.array([[1.0, 2.0]] * 3 + [[0.0, 0.0]])
    train = Dataset(feats, np.array([0, 0, 0, 1]), 2)
    val = Dataset(np.array([[1.0, 2.0]]), np.array([0]), 2)
    f = nb_feature_function(train, val)
    g1 = f.marginal(1, [0])
    g2 = f.marginal(2, [0, 1])
    assert g1 > g2 - 1e-12 and f.marginal(0, []) > g1


def test_nb_requires_validation():
    train = Dataset(np.zeros((3, 2)), np.array([0, 1, 0]), 2)
    empty_val = Dataset(np.zeros((0, 2)), np.array([], dtype=int), 2)
    with pytest.raises(ValueError):
        nb_feature_function(train, empty_val)


def test_lr_submodular_shifted_cut_nonnegative():
    full = gen_synthetic("binary-slack", 15, seed=8)
    train, val, _ = split(full, SplitSpec(0.5, 0.25, 0.25, seed=1))
    f = lr_submodular(train, val, m_clusters=3, seed=4)
    assert np.all(f.cut >= 0)


def test_lr_submodular_pure_modular_when_cut_zero():
    # identical z vectors arise when the cut matrix is constant; force the
    # degenerate case by zeroing it out and checking greedy = top-k
    full = gen_synthetic("binary-slack", 10, seed=9)
    train, val, _ = split(full, SplitSpec(0.5, 0.25, 0.25, seed=1))
    f = lr_submodular(train, val, m_clusters=2, seed=5)
    f.cut[:] = 0.0
    order = np.lexsort((np.arange(f.n), -f.modular))
    assert naive_greedy(f, 3) == [int(i) for i in order[:3]]


def test_kmeans_deterministic_and_partitioning():
    rng = SeededRng(12)
    pts = rng.normals(60).reshape(30, 2)
    c1, a1 = kmeans(pts, 4, SeededRng(3))
    c2, a2 = kmeans(pts, 4, SeededRng(3))
    assert np.array_equal(c1, c2) and np.array_equal(a1, a2)
    assert set(np.unique(a1)) <= set(range(4))
