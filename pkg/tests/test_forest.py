from dataclasses import replace

import numpy as np
import pytest

from rfdescent.forest import (Forest, ForestConfig, ForestError, binary_score, bootstrap_sample,
                              default_feature_budget, train_rf, zero_one_error)
from rfdescent.tree import GrowConfig, grow_tree


def unique_fraction_oracle(n=10000, draws=1000, seed=0):
    rng = np.random.default_rng(seed)
    return np.mean([np.unique(bootstrap_sample(n, rng)).size / n for _ in range(draws)])


def test_bootstrap_unique_fraction():
    assert abs(unique_fraction_oracle() - 0.632) <= 0.005


def test_bootstrap_single_point():
    assert bootstrap_sample(1, np.random.default_rng(0)).tolist() == [0]
    with pytest.raises(ForestError):
        bootstrap_sample(0, np.random.default_rng(0))


def test_default_feature_budget():
    assert [default_feature_budget(d) for d in (1, 4, 10, 14, 108)] == [1, 2, 4, 4, 11]


def test_single_tree_forest_equals_tree(blobs):
    grow = GrowConfig(max_leaf_nodes=20, feature_sample_size=blobs.d, seed=0)
    forest = train_rf(blobs, np.arange(blobs.N), ForestConfig(M=1, grow=grow, bootstrap=False))
    tree = grow_tree(blobs, np.arange(blobs.N), grow)
    np.testing.assert_array_equal(forest.predict_proba(blobs.X), tree.predict_proba(blobs.X))


def test_same_seed_same_forest(blobs):
    cfg = ForestConfig(M=4, grow=GrowConfig(max_leaf_nodes=10), seed=5)
    a = train_rf(blobs, np.arange(blobs.N), cfg)
    b = train_rf(blobs, np.arange(blobs.N), cfg)
    assert all(x.structure_equal(y) for x, y in zip(a.trees, b.trees))


def test_parallel_matches_serial(blobs):
    cfg = ForestConfig(M=4, grow=GrowConfig(max_leaf_nodes=10), seed=5)
    a = train_rf(blobs, np.arange(blobs.N), cfg)
    b = train_rf(blobs, np.arange(blobs.N), replace(cfg, n_jobs=2))
    assert a.to_json() == b.to_json()


def test_weights_validated(small_forest):
    trees = small_forest.trees[:2]
    with pytest.raises(ForestError):
        Forest(trees, [0.7, 0.7])
    with pytest.raises(ForestError):
        Forest(trees, [1.5, -0.5])
    with pytest.raises(ForestError):
        Forest([])


def test_identical_trees_equal_member(small_forest, blobs):
    t = small_forest.trees[0]
    forest = Forest([t, t.copy(), t.copy()])
    np.testing.assert_allclose(forest.predict_proba(blobs.X), t.predict_proba(blobs.X))


def test_two_opposite_trees():
    from rfdescent.dataio import Dataset
    ds = Dataset.from_arrays(np.zeros((2, 1)), [0, 1], 2)
    a = grow_tree(ds, [0], GrowConfig())
    b = grow_tree(ds, [1], GrowConfig())
    np.testing.assert_allclose(Forest([a, b]).predict_proba(np.zeros(1)), [0.5, 0.5])


def test_convex_outputs(small_forest, blobs):
    X = np.random.default_rng(0).normal(0, 4, size=(500, blobs.d))
    p = small_forest.predict_proba(X)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_arity_mismatch(small_forest, blobs):
    with pytest.raises(ForestError):
        small_forest.predict_proba(np.zeros((3, blobs.d + 2)))


def test_binary_score_values(small_forest):
    class Fixed:
        def __init__(self, p):
            self.p = np.asarray(p)

        def predict_proba(self, X):
            return self.p

    assert binary_score(Fixed([0.05, 0.95]), None) == pytest.approx(0.9)
    assert binary_score(Fixed([0.5, 0.5]), None) == 0.0
    with pytest.raises(ForestError):
        binary_score(Fixed([0.2, 0.3, 0.5]), None)


def test_binary_score_sign_matches_argmax(small_forest, blobs):
    X = np.random.default_rng(1).normal(0, 4, size=(1000, blobs.d))
    s = binary_score(small_forest, X)
    pred = small_forest.predict(X)
    decided = s != 0
    np.testing.assert_array_equal((s[decided] > 0).astype(int), pred[decided])


def test_training_error_goes_to_zero(blobs):
    cfg = ForestConfig(M=16, grow=GrowConfig(), seed=0)
    forest = train_rf(blobs, np.arange(blobs.N), cfg)
    assert zero_one_error(forest, blobs) <= 0.01


def test_json_round_trip(small_forest, blobs):
    back = Forest.from_json(small_forest.to_json())
    np.testing.assert_array_equal(back.predict_proba(blobs.X), small_forest.predict_proba(blobs.X))
    np.testing.assert_array_equal(back.weights, small_forest.weights)
