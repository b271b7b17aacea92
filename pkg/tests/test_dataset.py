import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracle_distill.dataset import (
    Dataset, DatasetFormatError, Multiset, SplitSpec, chi2_scores, chi2_select, label_entropy,
    load_dataset, parse_csv, parse_libsvm, sample_with_replacement, save_dataset, stratified_split,
    stratified_split_indices, stratified_subsample, write_csv, write_libsvm,
)


def test_libsvm_single_line_fills_absent_indices():
    ds = parse_libsvm("1 1:0.5 3:2.0", expected_dim=3)
    np.testing.assert_array_equal(ds.X, [[0.5, 0.0, 2.0]])
    assert ds.label_values[ds.y[0]] == 1.0


def test_libsvm_signed_labels_remap_ascending():
    ds = parse_libsvm("+1 2:1\n-1 1:1")
    assert ds.X.shape == (2, 2)
    assert ds.label_values == (-1.0, 1.0)
    np.testing.assert_array_equal(ds.y, [1, 0])


@pytest.mark.parametrize("text, fragment", [
    ("1 1:0.5\n1 2:x", "line 2"),
    ("1 1:0.5\n0 2:1 2:3", "duplicate index 2"),
    ("1 3:1 2:1", "strictly increasing"),
    ("one 1:1", "non-numeric label"),
    ("1 1-2", "malformed entry"),
    ("", "empty dataset"),
])
def test_libsvm_errors_name_the_problem(text, fragment):
    with pytest.raises(DatasetFormatError, match=fragment):
        parse_libsvm(text)


def test_libsvm_dimension_check():
    with pytest.raises(DatasetFormatError, match="exceeds"):
        parse_libsvm("1 4:1", expected_dim=3)


def _random_dataset(rng, n=100, d=5, C=3):
    X = rng.normal(size=(n, d))
    X[rng.random(X.shape) < 0.3] = 0.0
    y = rng.integers(0, C, n)
    return Dataset(X, y, C, feature_names=tuple(f"x{j}" for j in range(d)),
                   label_values=tuple(float(v) for v in (-3, 2, 7)[:C]))


def test_libsvm_round_trip_is_bit_exact(rng):
    ds = _random_dataset(rng)
    back = parse_libsvm(write_libsvm(ds), expected_dim=ds.n_features)
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.label_values == ds.label_values
    assert write_libsvm(back) == write_libsvm(ds)


def test_csv_basic_and_header_only():
    ds = parse_csv("a,b,label\n1,2,0\n3,4,1\n5,6,0\n")
    assert ds.n_features == 2 and ds.n_samples == 3
    assert ds.feature_names == ("a", "b")
    with pytest.raises(DatasetFormatError, match="empty dataset"):
        parse_csv("a,b,label\n")


def test_csv_named_label_column_and_ragged_row():
    ds = parse_csv("label,a\n1,0.5\n2,0.25\n", label_column="label")
    np.testing.assert_array_equal(ds.X[:, 0], [0.5, 0.25])
    with pytest.raises(DatasetFormatError, match="line 3"):
        parse_csv("a,label\n1,0\n1\n")


def test_csv_round_trip(rng):
    ds = _random_dataset(rng)
    assert parse_csv(write_csv(ds)) == ds


def test_save_and_load_by_extension(tmp_path, rng):
    ds = _random_dataset(rng, n=20)
    for name in ("d.csv", "d.libsvm"):
        save_dataset(ds, tmp_path / name)
        back = load_dataset(tmp_path / name)
        np.testing.assert_array_equal(back.y, ds.y)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.array([[np.nan]]), np.array([0]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), np.array([0, 2]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), np.array([0, 0]), 1)


def test_dataset_does_not_freeze_caller_arrays():
    X = np.zeros((3, 2))
    Dataset(X, np.array([0, 1, 0]), 2)
    X[0, 0] = 1.0


def test_split_exact_divisibility():
    y = np.repeat([0, 1], 50)
    ds = Dataset(np.arange(100.0)[:, None], y, 2)
    tr, va, te = stratified_split(ds, SplitSpec(seed=3))
    assert (tr.n_samples, va.n_samples, te.n_samples) == (60, 20, 20)
    for part, per in ((tr, 30), (va, 10), (te, 10)):
        np.testing.assert_array_equal(part.class_counts(), [per, per])


def test_split_is_deterministic_and_partitions():
    y = np.repeat([0, 1, 2], [40, 35, 25])
    ds = Dataset(np.arange(100.0)[:, None], y, 3)
    a = stratified_split(ds, SplitSpec(seed=9))
    b = stratified_split(ds, SplitSpec(seed=9))
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.row_ids, q.row_ids)
    ids = np.concatenate([p.row_ids for p in a])
    assert sorted(ids.tolist()) == list(range(100))
    # reassembly reproduces the parent (instance, label) multiset
    pairs = sorted((float(p.X[i, 0]), int(p.y[i])) for p in a for i in range(p.n_samples))
    assert pairs == sorted((float(ds.X[i, 0]), int(ds.y[i])) for i in range(100))


def test_split_imbalanced_counts_within_one(rng):
    y = rng.choice(4, size=10_000, p=[0.7, 0.2, 0.07, 0.03])
    ds = Dataset(rng.normal(size=(10_000, 1)), y, 4)
    parts = stratified_split(ds, SplitSpec(seed=1))
    whole = ds.class_counts()
    for part, frac in zip(parts, (0.6, 0.2, 0.2)):
        assert np.all(np.abs(part.class_counts() - frac * whole) <= 1.0)


def test_split_rejects_tiny_class():
    ds = Dataset(np.zeros((5, 1)), np.array([0, 0, 0, 1, 1]), 2)
    with pytest.raises(ValueError):
        stratified_split(ds)


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.5, 0.0)
    with pytest.raises(ValueError):
        SplitSpec(0.6, 0.2, 0.3)


def test_split_indices_fraction_count():
    y = np.repeat([0, 1], [10, 10])
    a, b = stratified_split_indices(y, [0.75, 0.25], seed=0, n_classes=2)
    assert a.size + b.size == 20 and np.intersect1d(a, b).size == 0


def test_subsample_keeps_row_ids():
    ds = Dataset(np.arange(50.0)[:, None], np.repeat([0, 1], 25), 2)
    sub = stratified_subsample(ds, 10, seed=0)
    assert sub.n_samples == 10
    np.testing.assert_array_equal(sub.X[:, 0], sub.row_ids)
    np.testing.assert_array_equal(sub.class_counts(), [5, 5])


def test_label_entropy_cases():
    assert label_entropy(np.array([0, 1] * 5), 2) == pytest.approx(1.0)
    assert label_entropy(np.zeros(10, dtype=int), 2) == 0.0
    # a 2:1 class split
    p = np.array([2 / 3, 1 / 3])
    expected = -(p * np.log2(p)).sum()
    assert expected == pytest.approx(0.918, abs=0.01)
    y = np.repeat([0, 1], [2000, 1000])
    assert label_entropy(y, 2) == pytest.approx(expected, abs=1e-12)


def test_label_entropy_permutation_invariant_and_max_at_balance(rng):
    y = rng.integers(0, 3, 300)
    perm = np.array([2, 0, 1])
    assert label_entropy(perm[y], 3) == pytest.approx(label_entropy(y, 3))
    assert label_entropy(np.repeat([0, 1, 2], 5), 3) == pytest.approx(1.0)
    assert label_entropy(np.repeat([0, 1, 2], [5, 5, 4]), 3) < 1.0


def test_chi2_picks_label_indicator(rng):
    y = rng.integers(0, 2, 200)
    X = np.c_[rng.integers(0, 2, 200), y]
    assert chi2_select(Dataset(X.astype(float), y, 2), 1) == [1]


def _brute_chi2(x, y, C):
    b = (x > 0).astype(int)
    table = np.zeros((2, C))
    for bi, yi in zip(b, y):
        table[bi, yi] += 1
    exp = table.sum(1, keepdims=True) * table.sum(0, keepdims=True) / table.sum()
    mask = exp > 0
    return float((((table - exp) ** 2)[mask] / exp[mask]).sum())


def test_chi2_matches_contingency_oracle(rng):
    n = 300
    y = rng.integers(0, 3, n)
    X = np.c_[
        rng.integers(0, 3, n),
        (y == 2) * rng.integers(0, 2, n),
        (rng.random(n) < 0.4 + 0.2 * (y == 0)).astype(int),
        rng.poisson(1.0, n),
    ].astype(float)
    ds = Dataset(X, y, 3)
    want = np.array([_brute_chi2(X[:, j], y, 3) for j in range(4)])
    np.testing.assert_allclose(chi2_scores(ds), want, rtol=1e-12)
    order = sorted(range(4), key=lambda j: (-want[j], j))
    assert chi2_select(ds, 4) == order
    assert chi2_select(ds, 2) == chi2_select(ds, 4)[:2]


def test_chi2_rejects_negative_features():
    with pytest.raises(ValueError):
        chi2_select(Dataset(np.array([[-1.0], [1.0]]), np.array([0, 1]), 2), 1)


def test_sampling_one_hot_and_empty():
    ms = sample_with_replacement(5, np.array([0, 0, 1.0, 0, 0]), 7, seed=0)
    np.testing.assert_array_equal(ms.indices, [2])
    np.testing.assert_array_equal(ms.counts, [7])
    assert sample_with_replacement(5, np.ones(5), 0, seed=0).total == 0


def test_sampling_uniform_binomial_bound():
    n, N = 100_000, 4
    ms = sample_with_replacement(N, np.ones(N), n, seed=11)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(ms.dense_counts() - n / 4) <= 4 * sigma)


def test_sampling_rejects_zero_weights():
    with pytest.raises(ValueError):
        sample_with_replacement(3, np.zeros(3), 5, seed=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=30),
       st.integers(0, 6), st.integers(0, 2**31 - 1))
def test_sampling_normalization_invariance(w, power, seed):
    w = np.array(w)
    c = 2.0 ** power
    a = sample_with_replacement(len(w), w, 50, seed)
    b = sample_with_replacement(len(w), c * w, 50, seed)
    np.testing.assert_array_equal(a.dense_counts(), b.dense_counts())


def test_multiset_sum_and_expand():
    a = Multiset.from_draws([0, 0, 3], 5)
    b = Multiset.from_draws([3, 4], 5)
    s = a + b
    np.testing.assert_array_equal(s.dense_counts(), [2, 0, 0, 2, 1])
    assert s.total == 5
    np.testing.assert_array_equal(s.expand(), [0, 0, 3, 3, 4])
    with pytest.raises(ValueError):
        a + Multiset.empty(6)
