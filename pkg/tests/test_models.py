import math
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from sklearn.base import clone

from chartfit.models import (
    GradientBoosting,
    LogisticRegressionGD,
    RandomForest,
    classify,
    load_model,
    log_loss,
    predict_forest,
    predict_gbm,
    predict_logistic,
    save_model,
    sigmoid,
)
from chartfit.trees import LEAF, Tree, TreeConfig, grow_tree


def _leaf(value, n_features=1):
    return Tree(
        np.array([LEAF]),
        np.zeros(1),
        np.array([-1]),
        np.array([-1]),
        np.array([float(value)]),
        np.array([1.0]),
        n_features,
    )


def _forest_of(values):
    model = RandomForest(n_estimators=len(values))
    model.trees_ = [_leaf(v) for v in values]
    model.classes_ = np.array([0, 1])
    model.n_features_in_ = 1
    return model


def _blobs(n=200, d=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(scale=0.5, size=n) > 0).astype(int)
    return X, y


# logistic regression ---------------------------------------------------


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(math.log(3)) == pytest.approx(0.75, abs=1e-15)
    assert sigmoid(np.array([-800.0, 800.0])).tolist() == [0.0, 1.0]


def test_gradient_matches_finite_differences():
    X, y = _blobs(60, 5, seed=1)
    model = LogisticRegressionGD(l2_penalty=0.05)
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(10):
        theta = rng.normal(size=6)
        coef, b = theta[:5], theta[5]
        g_coef, g_b = model.gradient(coef, b, X, y)
        analytic = np.append(g_coef, g_b)
        numeric = np.empty(6)
        for k in range(6):
            up, down = theta.copy(), theta.copy()
            up[k] += h
            down[k] -= h
            numeric[k] = (
                model.objective(up[:5], up[5], X, y) - model.objective(down[:5], down[5], X, y)
            ) / (2 * h)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel <= 1e-5


def test_separable_one_dimensional():
    X, y = np.array([[-1.0], [1.0]]), np.array([0, 1])
    model = LogisticRegressionGD(l2_penalty=0.01).fit(X, y)
    assert model.coef_[0] > 0
    assert model.score(X, y) == 1.0


def test_all_equal_labels_match_line_search():
    lam = 0.1
    X = np.random.default_rng(2).normal(size=(30, 3))
    X -= X.mean(axis=0)  # centered, so w = 0 is the penalized optimum
    y = np.ones(30, dtype=int)
    model = LogisticRegressionGD(l2_penalty=lam).fit(X, y)
    assert np.abs(model.coef_).max() < 1e-5
    best = minimize_scalar(
        lambda b: math.log1p(math.exp(-b)) + 0.5 * lam * b * b,
        bounds=(-20, 20),
        method="bounded",
        options={"xatol": 1e-12},
    )
    assert predict_logistic(model, X[0]) == pytest.approx(sigmoid(best.x), abs=1e-6)


def test_zero_parameters_give_half():
    model = LogisticRegressionGD(max_iter=0).fit(*_blobs(20, 3))
    assert np.allclose(model.predict_proba(np.ones((4, 3)))[:, 1], 0.5)


def test_probability_increases_with_positive_weight():
    X, y = _blobs()
    model = LogisticRegressionGD().fit(X, y)
    assert model.coef_[0] > 0
    grid = np.zeros((5, X.shape[1]))
    grid[:, 0] = np.linspace(-2, 2, 5)
    assert np.all(np.diff(model.predict_proba(grid)[:, 1]) > 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    X, y = _blobs()
    with pytest.raises(FloatingPointError):
        LogisticRegressionGD(learning_rate=1e6, l2_penalty=1.0).fit(X * 1e3, y)


@pytest.mark.parametrize("prob, expected", [(0.5, 1), (0.49, 0), (0.986, 1)])
def test_classify_threshold(prob, expected):
    assert classify(prob, 0.5) == expected


# forest -------------------------------------------------------------


def test_forest_defaults():
    params = RandomForest().get_params()
    assert params["n_estimators"] == 200 and params["max_depth"] is None


@pytest.mark.parametrize("votes, expected", [([1, 1, 0], 1), ([1, 0], 0), ([0, 0, 1], 0)])
def test_forest_vote(votes, expected):
    model = _forest_of(votes)
    label, prob = predict_forest(model, np.array([0.0]))
    assert label == expected
    assert prob == pytest.approx(np.mean(votes))


def test_forest_vote_equals_manual_mode():
    X, y = _blobs(150, 4, seed=3)
    model = RandomForest(n_estimators=15, random_state=1).fit(X, y)
    Q = np.random.default_rng(4).normal(size=(100, 4))
    for x in Q:
        votes = [int(t.predict(x[None, :])[0] >= 0.5) for t in model.trees_]
        ones = sum(votes)
        mode = 1 if ones > len(votes) - ones else 0
        assert predict_forest(model, x)[0] == mode


def test_single_tree_forest_is_cart_on_bootstrap():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(80, 1))
    y = (X[:, 0] + rng.normal(scale=0.3, size=80) > 0).astype(int)
    model = RandomForest(n_estimators=1, random_state=9).fit(X, y)
    seed = model.tree_seeds()[0]
    rows = np.random.default_rng(seed).integers(0, 80, 80)
    tree = grow_tree(X[rows], y[rows], TreeConfig(criterion="gini"))
    Q = rng.normal(size=(200, 1))
    assert np.array_equal(model.trees_[0].predict(Q), tree.predict(Q))


def test_forest_deterministic_serialization(tmp_path):
    X, y = _blobs(100, 3, seed=6)
    for name in ("a", "b"):
        save_model(RandomForest(n_estimators=10, random_state=4).fit(X, y), tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


# boosting --------------------------------------------------------------


def test_gbm_without_stages_predicts_prior():
    X, y = _blobs(100, 3, seed=7)
    model = GradientBoosting(n_estimators=0).fit(X, y)
    assert np.allclose(model.predict_proba(X)[:, 1], y.mean())


def test_gbm_hand_built_ensembles():
    model = GradientBoosting(n_estimators=0, learning_rate=1.0)
    model.classes_, model.n_features_in_ = np.array([0, 1]), 1
    model.base_score_, model.trees_, model.stage_weights_ = 0.0, [], []
    assert predict_gbm(model, np.array([3.0])) == 0.5
    model.trees_, model.stage_weights_ = [_leaf(0.8)], [1.0]
    assert predict_gbm(model, np.array([3.0])) == pytest.approx(sigmoid(0.8), abs=1e-15)


def test_gbm_first_stage_fits_residuals():
    X = np.zeros((5, 1))
    y = np.array([1, 1, 1, 1, 0])
    model = GradientBoosting(n_estimators=1, min_samples_split=2).fit(X, y)
    assert model.base_score_ == pytest.approx(math.log(4.0))
    # one leaf whose value is the mean residual y - p with p = 0.8
    assert model.trees_[0].value[0] == pytest.approx(np.mean(y - 0.8), abs=1e-15)


def test_gbm_loss_non_increasing_and_recomputed():
    X, y = _blobs(300, 4, seed=8)
    model = GradientBoosting(n_estimators=60).fit(X, y)
    assert len(model.train_loss_) == 61
    score = np.full(len(y), model.base_score_)
    recomputed = [log_loss(y, score)]
    for w, tree in zip(model.stage_weights_, model.trees_):
        score = score + w * tree.predict(X)
        recomputed.append(log_loss(y, score))
    assert np.allclose(recomputed, model.train_loss_, rtol=0, atol=1e-12)
    assert np.all(np.diff(model.train_loss_) <= 1e-12)


def test_gbm_staged_sum_from_serialized_file(tmp_path):
    X, y = _blobs(200, 4, seed=9)
    save_model(GradientBoosting(n_estimators=25).fit(X, y), tmp_path / "gbm.json")
    loaded, _ = load_model(tmp_path / "gbm.json")
    doc = loaded.to_dict()["parameters"]
    for x in X[:50]:
        score = doc["base_score"]
        for stage in doc["stages"]:
            score += stage["weight"] * Tree.from_dict(stage["tree"]).predict(x[None, :])[0]
        assert abs(sigmoid(score) - predict_gbm(loaded, x)) <= 1e-12


def test_gbm_single_class_warns_and_clamps():
    X = np.random.default_rng(0).normal(size=(10, 2))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        model = GradientBoosting(n_estimators=2).fit(X, np.ones(10, dtype=int))
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    assert model.base_score_ == 10.0


# shared behaviour --------------------------------------------------------


@pytest.mark.parametrize(
    "model",
    [LogisticRegressionGD(), RandomForest(n_estimators=5), GradientBoosting(n_estimators=10)],
)
def test_save_load_round_trip(tmp_path, model):
    X, y = _blobs(120, 4, seed=10)
    model = clone(model).fit(X, y)
    save_model(model, tmp_path / "m.json")
    loaded, std = load_model(tmp_path / "m.json")
    assert std is None
    assert type(loaded) is type(model)
    assert np.array_equal(loaded.predict_proba(X), model.predict_proba(X))


def test_rejects_non_binary_labels():
    X, _ = _blobs(10, 2)
    with pytest.raises(ValueError):
        LogisticRegressionGD().fit(X, np.arange(10))


def test_predict_checks_width():
    X, y = _blobs(50, 3)
    model = LogisticRegressionGD().fit(X, y)
    with pytest.raises(ValueError):
        model.predict(np.zeros((2, 4)))
