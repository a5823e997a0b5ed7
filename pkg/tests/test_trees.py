import itertools

import numpy as np
import pytest
from oracles import naive_predict, oracle_best_split

from chartfit.trees import (
    LEAF,
    Tree,
    TreeConfig,
    best_split,
    gini,
    grow_tree,
    predict_tree,
)


@pytest.mark.parametrize(
    "labels, expected", [([1, 1, 0, 0], 0.5), ([1, 1, 1], 0.0), ([1, 0, 0, 0], 0.375)]
)
def test_gini_examples(labels, expected):
    assert gini(labels) == pytest.approx(expected, abs=1e-15)


def test_best_split_one_dimensional():
    split = best_split(np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([0, 0, 1, 1]))
    assert (split.feature, split.threshold) == (0, 2.5)
    assert split.impurity_decrease == pytest.approx(0.5, abs=1e-15)


def test_best_split_pure_node_has_no_split():
    assert best_split(np.arange(8.0).reshape(4, 2), np.ones(4)) is None


def test_constant_feature_never_chosen():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    X[:, 1] = 5.0
    y = (X[:, 0] > 0).astype(int)
    assert best_split(X, y).feature != 1
    tree = grow_tree(X, y)
    assert 1 not in set(tree.feature.tolist())


def test_best_split_matches_exhaustive_enumeration():
    rng = np.random.default_rng(2024)
    mismatches = []
    for case in range(200):
        n = int(rng.integers(2, 51))
        d = int(rng.integers(1, 5))
        if case % 2:
            X = rng.integers(0, 5, size=(n, d)).astype(float)  # many ties
        else:
            X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, n)
        got = best_split(X, y)
        want = oracle_best_split(X, y)
        got_t = None if got is None else (got.feature, got.threshold)
        want_t = None if want is None else (want[0], want[1])
        if got_t != want_t or (got and abs(got.impurity_decrease - want[2]) > 1e-12):
            mismatches.append((case, got, want))
    assert mismatches == []


def test_single_label_rows_give_single_leaf():
    tree = grow_tree(np.random.default_rng(1).normal(size=(10, 2)), np.ones(10))
    assert tree.node_count == 1 and tree.value[0] == 1.0


def test_max_depth_zero_is_global_mean():
    y = np.array([1, 0, 0, 1, 1])
    tree = grow_tree(np.arange(10.0).reshape(5, 2), y, TreeConfig(max_depth=0))
    assert tree.node_count == 1 and tree.value[0] == pytest.approx(0.6)


def test_separable_data_fits_exactly():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, size=(300, 2))
    y = ((X[:, 0] > 0.1) ^ (X[:, 1] < -0.3)).astype(int)
    tree = grow_tree(X, y)
    lookup = {tuple(x): label for x, label in zip(X, y)}
    assert all(predict_tree(tree, x) == lookup[tuple(x)] for x in X)


def test_depth_limit_respected():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 3))
    y = rng.integers(0, 2, 200)
    assert grow_tree(X, y, TreeConfig(max_depth=3)).max_depth <= 3


def test_single_leaf_prediction():
    tree = Tree(
        np.array([LEAF]),
        np.zeros(1),
        np.array([-1]),
        np.array([-1]),
        np.array([0.7]),
        np.array([1.0]),
        3,
    )
    assert predict_tree(tree, np.array([9.0, -1.0, 0.0])) == 0.7


def test_threshold_boundary_goes_left():
    tree = Tree(
        np.array([0, LEAF, LEAF]),
        np.array([0.5, 0, 0]),
        np.array([1, -1, -1]),
        np.array([2, -1, -1]),
        np.array([0.0, 10.0, 20.0]),
        np.array([2.0, 1.0, 1.0]),
        1,
    )
    assert predict_tree(tree, np.array([0.5])) == 10.0
    assert predict_tree(tree, np.array([0.5000001])) == 20.0


def test_predict_matches_naive_evaluator():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(150, 4))
    y = rng.integers(0, 2, 150)
    trees = [
        grow_tree(X, y, TreeConfig(feature_subsample="sqrt", rng_seed=s, max_depth=m))
        for s, m in itertools.product(range(3), (None, 4))
    ]
    Q = np.vstack([rng.normal(size=(900, 4)), X[:100]])
    for tree in trees:
        fast = tree.predict(Q)
        assert all(fast[i] == naive_predict(tree, Q[i]) for i in range(len(Q)))


def test_regression_tree_reduces_squared_error():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(200, 2))
    y = np.where(X[:, 0] > 0, 2.0, -1.0) + rng.normal(scale=0.1, size=200)
    tree = grow_tree(X, y, TreeConfig(max_depth=1, criterion="squared_error"))
    assert tree.feature[0] == 0
    assert np.mean((tree.predict(X) - y) ** 2) < 0.05


def test_sample_weight_zero_rows_ignored():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 1, 0, 1])
    tree = grow_tree(X, y, sample_weight=np.array([1.0, 0.0, 1.0, 0.0]))
    assert tree.node_count == 1 and tree.value[0] == 0.0 and tree.cover[0] == 2.0


def test_serialization_round_trip():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(80, 3))
    tree = grow_tree(X, rng.integers(0, 2, 80))
    again = Tree.from_dict(tree.to_dict())
    assert np.array_equal(tree.predict(X), again.predict(X))
    assert np.array_equal(tree.cover, again.cover)


@pytest.mark.parametrize(
    "kwargs", [{"max_depth": -1}, {"min_samples_split": 1}, {"criterion": "entropy"}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TreeConfig(**kwargs)
