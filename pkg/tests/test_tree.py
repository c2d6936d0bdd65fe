from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfe.data import Dataset
from gfe.errors import DimensionMismatch, EmptyDataset, InvalidParameter
from gfe.tree import RegressionTree, fit, grow, tree_kernel

TOY_X = np.array([[0.0], [1.0], [2.0], [3.0]])
TOY_Y = np.array([0.0, 0.0, 10.0, 10.0])


def test_constant_targets_give_one_leaf():
    t = grow(np.arange(5.0), np.full(5, 2.0))
    assert t.n_leaves == 1
    assert t.leaf_mean[0] == 2.0


def test_hand_computed_split():
    t = grow(TOY_X, TOY_Y)
    assert t.n_leaves == 2
    assert t.threshold[0] == 1.5
    np.testing.assert_array_equal(t.leaf_mean, [0.0, 10.0])
    np.testing.assert_array_equal(t.leaf_count, [2, 2])


def test_depth_zero_is_a_single_leaf():
    t = grow(TOY_X, TOY_Y, max_depth=0)
    assert t.n_leaves == 1
    assert t.leaf_mean[0] == 5.0


def test_routing():
    t = grow(TOY_X, TOY_Y)
    assert t.leaf_of([1.0]) == 0
    assert t.leaf_of([1.5]) == 0  # ties at the threshold go left
    assert t.leaf_of([1.5000001]) == 1


def test_single_leaf_routes_everything_to_zero():
    t = grow(TOY_X, np.ones(4))
    assert t.leaf_of([123.0]) == 0


def test_tree_kernel_examples():
    t = grow(TOY_X, TOY_Y)
    assert tree_kernel(t, [0.3], [0.3]) == 1
    assert tree_kernel(t, [0.0], [3.0]) == 0
    single = grow(TOY_X, np.ones(4))
    assert tree_kernel(single, [-5.0], [5.0]) == 1


def test_leaf_boxes():
    t = grow(TOY_X, TOY_Y)
    assert t.leaves[0].lower == (-np.inf,) and t.leaves[0].upper == (1.5,)
    assert t.leaves[1].lower == (1.5,) and t.leaves[1].upper == (np.inf,)


def test_min_leaf_size_respected():
    rng = np.random.default_rng(0)
    X = rng.random((200, 2))
    t = grow(X, rng.standard_normal(200), min_leaf_size=7)
    assert t.leaf_count.min() >= 7
    assert t.leaf_count.sum() == 200


def test_fit_on_dataset():
    ds = Dataset(TOY_X, TOY_Y, tuple(frozenset() for _ in range(4)))
    assert fit(ds).n_leaves == 2


def test_errors():
    with pytest.raises(EmptyDataset):
        grow(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(DimensionMismatch):
        grow(TOY_X, np.zeros(3))
    with pytest.raises(InvalidParameter):
        grow(TOY_X, TOY_Y, min_leaf_size=0)
    with pytest.raises(InvalidParameter):
        grow(TOY_X, TOY_Y, feature_subsample=0.0)
    with pytest.raises(DimensionMismatch):
        grow(TOY_X, TOY_Y).apply(np.zeros((2, 3)))


def test_dict_round_trip_keeps_infinite_bounds():
    rng = np.random.default_rng(1)
    X = rng.random((50, 3))
    t = grow(X, rng.standard_normal(50), max_depth=4)
    back = RegressionTree.from_dict(t.to_dict())
    np.testing.assert_array_equal(back.predict(X), t.predict(X))
    np.testing.assert_array_equal(back.box_lower, t.box_lower)
    np.testing.assert_array_equal(back.box_upper, t.box_upper)


def test_feature_subsample_is_seeded():
    rng = np.random.default_rng(2)
    X = rng.random((100, 5))
    y = X @ rng.standard_normal(5)
    a = grow(X, y, max_depth=4, seed=3, feature_subsample=0.4)
    b = grow(X, y, max_depth=4, seed=3, feature_subsample=0.4)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_full_features_ignore_seed():
    rng = np.random.default_rng(2)
    X = rng.random((60, 3))
    y = rng.standard_normal(60)
    np.testing.assert_array_equal(grow(X, y, seed=1).predict(X), grow(X, y, seed=99).predict(X))


def test_with_leaf_stats():
    t = grow(TOY_X, TOY_Y)
    t2 = t.with_leaf_stats(np.array([[0.0], [5.0], [6.0]]), np.array([1.0, 2.0, 4.0]))
    np.testing.assert_array_equal(t2.leaf_mean, [1.0, 3.0])
    np.testing.assert_array_equal(t2.leaf_count, [1, 2])


data_strategy = st.integers(0, 2**31 - 1).map(np.random.default_rng)


@settings(max_examples=40, deadline=None)
@given(rng=data_strategy, n=st.integers(1, 80), d=st.integers(1, 3))
def test_training_prediction_is_leaf_mean(rng, n, d):
    X = rng.integers(0, 6, size=(n, d)).astype(float)
    y = rng.standard_normal(n)
    t = grow(X, y, min_leaf_size=int(rng.integers(1, 4)))
    leaf = t.apply(X)
    assert set(leaf.tolist()) == set(range(t.n_leaves))
    for j in range(t.n_leaves):
        np.testing.assert_allclose(t.leaf_mean[j], y[leaf == j].mean(), rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(t.predict(X), t.leaf_mean[leaf])


@settings(max_examples=30, deadline=None)
@given(rng=data_strategy, n=st.integers(2, 60))
def test_permuting_rows_does_not_change_tree(rng, n):
    X = rng.integers(0, 8, size=(n, 2)).astype(float)
    y = rng.integers(0, 4, size=n).astype(float)
    perm = rng.permutation(n)
    a, b = grow(X, y, max_depth=5), grow(X[perm], y[perm], max_depth=5)
    np.testing.assert_array_equal(a.threshold, b.threshold)
    np.testing.assert_array_equal(a.feature, b.feature)
    np.testing.assert_allclose(a.leaf_mean, b.leaf_mean, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(rng=data_strategy)
def test_kernel_is_an_equivalence_relation(rng):
    X = rng.random((40, 2))
    t = grow(X, rng.standard_normal(40), max_depth=3)
    P = rng.random((15, 2))
    K = t.kernel_matrix(P)
    np.testing.assert_array_equal(K, K.T)
    assert np.all(np.diag(K) == 1)
    # transitivity: K_ij K_jk <= K_ik
    assert np.all(np.einsum("ij,jk->ijk", K, K) <= K[:, None, :] + 0.0)
