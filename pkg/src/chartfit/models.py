"""Logistic regression, random forest and gradient boosting classifiers.

All three follow the scikit-learn estimator protocol (``fit``, ``predict``,
``predict_proba``, ``get_params``) and serialize to versioned JSON.
"""

from __future__ import annotations

import json
import math
import warnings
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import StandardizationParams
from .trees import Tree, TreeConfig, grow_tree, presort

MODEL_FORMAT_VERSION = 1
MAX_LOG_ODDS = 10.0


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def log_loss(y, score) -> float:
    """Mean binary log-loss of raw scores (log-odds)."""
    y = np.asarray(y, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


def _check_binary(y):
    y = np.asarray(y)
    bad = set(np.unique(y).tolist()) - {0, 1}
    if bad:
        raise ValueError(f"labels must be 0/1, got {sorted(bad)}")
    return y.astype(np.float64)


class _BinaryClassifier(ClassifierMixin, BaseEstimator):
    def _validate_fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=True)
        y = _check_binary(y)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return np.ascontiguousarray(X), y

    def _validate_predict(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, model was trained with {self.n_features_in_}"
            )
        return np.ascontiguousarray(X)

    def predict_proba(self, X):
        p = self.positive_proba(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.positive_proba(X) >= 0.5).astype(int)

    def to_dict(self) -> dict:
        check_is_fitted(self, "n_features_in_")
        return {
            "model_type": self.model_type,
            "config": self.get_params(),
            "n_features": int(self.n_features_in_),
            "parameters": self._parameters(),
        }

    @classmethod
    def from_dict(cls, data: dict):
        model = cls(**data["config"])
        model.classes_ = np.array([0, 1])
        model.n_features_in_ = int(data["n_features"])
        model._load_parameters(data["parameters"])
        return model


class LogisticRegressionGD(_BinaryClassifier):
    """L2-penalized logistic regression fitted by full-batch gradient descent.

    The objective is the mean log-loss plus
    ``l2_penalty / 2 * (||coef||**2 + intercept**2)``.

    Parameters
    ----------
    learning_rate : float, default=0.1
    max_iter : int, default=5000
    tol : float, default=1e-6
        Stop once the gradient's max-norm falls below this.
    l2_penalty : float, default=1e-4
    """

    model_type = "logreg"

    def __init__(self, learning_rate=0.1, max_iter=5000, tol=1e-6, l2_penalty=1e-4):
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.tol = tol
        self.l2_penalty = l2_penalty

    def objective(self, coef, intercept, X, y) -> float:
        score = X @ coef + intercept
        penalty = 0.5 * self.l2_penalty * (coef @ coef + intercept * intercept)
        return log_loss(y, score) + penalty

    def gradient(self, coef, intercept, X, y):
        residual = sigmoid(X @ coef + intercept) - y
        grad_coef = X.T @ residual / len(y) + self.l2_penalty * coef
        grad_intercept = residual.mean() + self.l2_penalty * intercept
        return grad_coef, float(grad_intercept)

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        coef = np.zeros(X.shape[1])
        intercept = 0.0
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            grad_coef, grad_intercept = self.gradient(coef, intercept, X, y)
            if max(np.max(np.abs(grad_coef), initial=0.0), abs(grad_intercept)) < self.tol:
                n_iter -= 1
                break
            coef = coef - self.learning_rate * grad_coef
            intercept = intercept - self.learning_rate * grad_intercept
            if not (np.all(np.isfinite(coef)) and math.isfinite(intercept)):
                raise FloatingPointError("gradient descent diverged; use a smaller learning_rate")
        self.loss_ = self.objective(coef, intercept, X, y)
        if not math.isfinite(self.loss_):
            raise FloatingPointError("non-finite loss; use a smaller learning_rate")
        self.coef_ = coef
        self.intercept_ = intercept
        self.n_iter_ = n_iter
        return self

    def decision_function(self, X):
        X = self._validate_predict(X)
        return X @ self.coef_ + self.intercept_

    def positive_proba(self, X):
        return sigmoid(self.decision_function(X))

    def _parameters(self):
        return {
            "weights": [float(v) for v in self.coef_],
            "intercept": float(self.intercept_),
            "loss": float(self.loss_),
            "n_iter": int(self.n_iter_),
        }

    def _load_parameters(self, params):
        self.coef_ = np.array(params["weights"], dtype=np.float64)
        self.intercept_ = float(params["intercept"])
        self.loss_ = float(params.get("loss", float("nan")))
        self.n_iter_ = int(params.get("n_iter", 0))


class RandomForest(_BinaryClassifier):
    """Bagged Gini trees with per-split feature subsampling.

    ``predict`` is the majority of the trees' hard votes (a tree votes 1 when
    its leaf fraction is at least 0.5; tied votes give 0).  ``predict_proba``
    is the mean leaf fraction.

    Parameters
    ----------
    n_estimators : int, default=200
    max_depth : int or None, default=None
    min_samples_split : int, default=2
    max_features : {"sqrt", "all"}, default="sqrt"
    random_state : int, default=0
    """

    model_type = "forest"

    def __init__(
        self,
        n_estimators=200,
        max_depth=None,
        min_samples_split=2,
        max_features="sqrt",
        random_state=0,
    ):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.random_state = random_state

    def tree_seeds(self) -> list[int]:
        streams = np.random.SeedSequence(self.random_state).spawn(self.n_estimators)
        return [int(s.generate_state(1)[0]) for s in streams]

    def fit(self, X, y):
        if self.n_estimators < 1:
            raise ValueError("a forest needs at least one tree")
        X, y = self._validate_fit(X, y)
        n = len(y)
        order = presort(X)
        self.trees_ = []
        for seed in self.tree_seeds():
            rows = np.random.default_rng(seed).integers(0, n, n)
            weight = np.bincount(rows, minlength=n).astype(np.float64)
            config = TreeConfig(
                max_depth=self.max_depth,
                min_samples_split=self.min_samples_split,
                feature_subsample=self.max_features,
                criterion="gini",
                rng_seed=seed,
            )
            self.trees_.append(grow_tree(X, y, config, sample_weight=weight, presorted=order))
        return self

    def tree_outputs(self, X):
        """Leaf class-1 fractions, one column per tree."""
        X = self._validate_predict(X)
        return np.column_stack([t.predict(X) for t in self.trees_])

    def positive_proba(self, X):
        return self.tree_outputs(X).mean(axis=1)

    def predict(self, X):
        votes = (self.tree_outputs(X) >= 0.5).sum(axis=1)
        return (2 * votes > len(self.trees_)).astype(int)

    def _parameters(self):
        return {"trees": [t.to_dict() for t in self.trees_]}

    def _load_parameters(self, params):
        self.trees_ = [Tree.from_dict(t) for t in params["trees"]]


class GradientBoosting(_BinaryClassifier):
    """Log-loss gradient boosting with shallow squared-error trees.

    Each stage fits a tree to the residuals ``y - p`` and adds it to the
    log-odds score scaled by ``learning_rate``.

    Parameters
    ----------
    n_estimators : int, default=300
    learning_rate : float, default=0.1
    max_depth : int, default=3
    min_samples_split : int, default=10
    """

    model_type = "gbm"

    def __init__(self, n_estimators=300, learning_rate=0.1, max_depth=3, min_samples_split=10):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split

    def fit(self, X, y):
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        X, y = self._validate_fit(X, y)
        rate = y.mean()
        if rate in (0.0, 1.0):
            warnings.warn(
                "training labels hold a single class; base score clamped to "
                f"{'+' if rate else '-'}{MAX_LOG_ODDS:g} log-odds",
                RuntimeWarning,
                stacklevel=2,
            )
            base = MAX_LOG_ODDS if rate else -MAX_LOG_ODDS
        else:
            base = float(np.clip(math.log(rate / (1.0 - rate)), -MAX_LOG_ODDS, MAX_LOG_ODDS))
        self.base_score_ = base
        config = TreeConfig(
            max_depth=self.max_depth,
            min_samples_split=self.min_samples_split,
            criterion="squared_error",
        )
        order = presort(X)
        score = np.full(len(y), base)
        self.train_loss_ = [log_loss(y, score)]
        self.trees_ = []
        self.stage_weights_ = []
        for _ in range(self.n_estimators):
            residual = y - sigmoid(score)
            tree = grow_tree(X, residual, config, presorted=order)
            score = score + self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
            self.stage_weights_.append(float(self.learning_rate))
            self.train_loss_.append(log_loss(y, score))
        return self

    def decision_function(self, X):
        X = self._validate_predict(X)
        score = np.full(X.shape[0], self.base_score_)
        for weight, tree in zip(self.stage_weights_, self.trees_):
            score += weight * tree.predict(X)
        return score

    def positive_proba(self, X):
        return sigmoid(self.decision_function(X))

    def _parameters(self):
        return {
            "base_score": float(self.base_score_),
            "stages": [
                {"weight": w, "tree": t.to_dict()} for w, t in zip(self.stage_weights_, self.trees_)
            ],
            "train_loss": [float(v) for v in self.train_loss_],
        }

    def _load_parameters(self, params):
        self.base_score_ = float(params["base_score"])
        self.stage_weights_ = [float(s["weight"]) for s in params["stages"]]
        self.trees_ = [Tree.from_dict(s["tree"]) for s in params["stages"]]
        self.train_loss_ = list(params.get("train_loss", []))


MODEL_TYPES = {
    cls.model_type: cls for cls in (LogisticRegressionGD, RandomForest, GradientBoosting)
}


def save_model(model, path, standardizer: StandardizationParams | None = None) -> None:
    doc = {"format_version": MODEL_FORMAT_VERSION, **model.to_dict()}
    doc["standardization"] = standardizer.to_dict() if standardizer else None
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_model(path):
    """Read a model file; returns ``(model, standardizer_or_None)``."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format {doc.get('format_version')!r}")
    try:
        cls = MODEL_TYPES[doc["model_type"]]
    except KeyError:
        raise ValueError(f"{path}: unknown model_type {doc.get('model_type')!r}") from None
    std = doc.get("standardization")
    return cls.from_dict(doc), StandardizationParams.from_dict(std) if std else None


# Functional entry points -------------------------------------------------


def _single_row(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a single feature vector")
    return x[None, :]


def train_logistic(X, y, **config) -> LogisticRegressionGD:
    return LogisticRegressionGD(**config).fit(X, y)


def predict_logistic(model: LogisticRegressionGD, x) -> float:
    return float(model.positive_proba(_single_row(model, x))[0])


def train_forest(X, y, **config) -> RandomForest:
    return RandomForest(**config).fit(X, y)


def predict_forest(model: RandomForest, x) -> tuple[int, float]:
    """``(majority-vote class, mean leaf fraction)`` for one vector."""
    row = _single_row(model, x)
    return int(model.predict(row)[0]), float(model.positive_proba(row)[0])


def train_gbm(X, y, **config) -> GradientBoosting:
    return GradientBoosting(**config).fit(X, y)


def predict_gbm(model: GradientBoosting, x) -> float:
    return float(model.positive_proba(_single_row(model, x))[0])


def classify(probability: float, threshold: float = 0.5) -> int:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    if not 0.0 <= probability <= 1.0:
        raise ValueError("probability must lie in [0, 1]")
    return int(probability >= threshold)
