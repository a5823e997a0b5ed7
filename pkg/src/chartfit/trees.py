"""CART decision trees shared by the random forest and the gradient booster.

Trees are stored as parallel node arrays in pre-order (root at index 0, left
subtree before right subtree).  Rows with ``x[feature] <= threshold`` go left.
Every node records its cover, the (weighted) number of training rows that
reached it, which is what TreeSHAP uses for its conditional expectations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

TREE_FORMAT_VERSION = 1

GINI = 0
SQUARED_ERROR = 1
_CRITERIA = {"gini": GINI, "squared_error": SQUARED_ERROR}

# A split must improve impurity by more than this to count; the same slack
# makes later candidates beat earlier ones only on a real improvement, so
# near-ties resolve to the lowest feature index and then the lowest threshold.
_SPLIT_TOL = 1e-12

LEAF = -1


@dataclass
class TreeConfig:
    max_depth: int | None = None
    min_samples_split: int = 2
    feature_subsample: str = "all"
    criterion: str = "gini"
    rng_seed: int = 0

    def __post_init__(self):
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.feature_subsample not in ("all", "sqrt"):
            raise ValueError(f"unknown feature_subsample {self.feature_subsample!r}")
        if self.criterion not in _CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")


@dataclass
class Tree:
    """Flat array representation of a fitted binary tree."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    n_features: int
    _max_depth: int | None = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    @property
    def max_depth(self) -> int:
        if self._max_depth is None:
            depth = np.zeros(self.node_count, dtype=np.int64)
            for i in range(self.node_count):
                if self.feature[i] != LEAF:
                    depth[self.left[i]] = depth[i] + 1
                    depth[self.right[i]] = depth[i] + 1
            self._max_depth = int(depth.max())
        return self._max_depth

    def expected_value(self) -> float:
        """Cover-weighted mean of the leaf values."""
        leaves = self.feature == LEAF
        return float(np.dot(self.value[leaves], self.cover[leaves]) / self.cover[0])

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected input with {self.n_features} features, got shape {X.shape}")
        return _predict_values(self.feature, self.threshold, self.left, self.right, self.value, X)

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.node_count):
            cover = float(self.cover[i])
            cover = int(cover) if cover.is_integer() else cover
            if self.feature[i] == LEAF:
                nodes.append({"value": float(self.value[i]), "cover": cover})
            else:
                nodes.append(
                    {
                        "feature": int(self.feature[i]),
                        "threshold": float(self.threshold[i]),
                        "cover": cover,
                        "left": int(self.left[i]),
                        "right": int(self.right[i]),
                    }
                )
        return {
            "format_version": TREE_FORMAT_VERSION,
            "n_features": self.n_features,
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        version = data.get("format_version")
        if version != TREE_FORMAT_VERSION:
            raise ValueError(f"unsupported tree format version {version!r}")
        nodes = data["nodes"]
        n = len(nodes)
        feature = np.full(n, LEAF, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n)
        cover = np.zeros(n)
        for i, node in enumerate(nodes):
            cover[i] = node["cover"]
            if "value" in node:
                value[i] = node["value"]
            else:
                feature[i] = node["feature"]
                threshold[i] = node["threshold"]
                left[i] = node["left"]
                right[i] = node["right"]
        return cls(feature, threshold, left, right, value, cover, int(data["n_features"]))


def gini(labels) -> float:
    """Gini impurity ``1 - p0**2 - p1**2`` of a list of 0/1 labels."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("gini impurity of an empty node is undefined")
    p1 = labels.mean()
    p0 = 1.0 - p1
    return float(1.0 - p0 * p0 - p1 * p1)


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    impurity_decrease: float


def best_split(X, y, candidate_features=None, criterion="gini", sample_weight=None):
    """Best (feature, midpoint threshold) over the candidate features.

    Returns ``None`` when no threshold lowers the weighted impurity.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per target")
    if candidate_features is None:
        candidate_features = np.arange(X.shape[1])
    feats = np.sort(np.asarray(candidate_features, dtype=np.int64))
    w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
    idx = np.arange(len(y), dtype=np.int64)
    f, thr, dec = _node_split(X, y, w, idx, feats, _CRITERIA[criterion])
    if f < 0:
        return None
    return Split(int(f), float(thr), float(dec))


def presort(X) -> np.ndarray:
    """Row order of each column, shape ``(n_features, n_rows)``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int64)


def grow_tree(X, y, config: TreeConfig | None = None, sample_weight=None, presorted=None) -> Tree:
    """Grow a CART tree on ``X, y`` (rows with zero weight are ignored).

    With ``feature_subsample="sqrt"`` each split looks at ``ceil(sqrt(d))``
    randomly drawn features that are not constant in the node.  Callers
    growing many trees on one ``X`` can pass ``presorted=presort(X)``.
    """
    config = config or TreeConfig()
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise ValueError("need a non-empty 2-D X with one row per target")
    if sample_weight is None:
        w = np.ones(len(y))
    else:
        w = np.ascontiguousarray(sample_weight, dtype=np.float64)
    d = X.shape[1]
    n_sub = d if config.feature_subsample == "all" else math.ceil(math.sqrt(d))
    max_depth = -1 if config.max_depth is None else int(config.max_depth)
    if presorted is None:
        presorted = presort(X)
    feature, threshold, left, right, value, cover = _build(
        X,
        y,
        w,
        presorted,
        max_depth,
        float(config.min_samples_split),
        n_sub,
        _CRITERIA[config.criterion],
        int(config.rng_seed) & 0xFFFFFFFF,
    )
    return Tree(feature, threshold, left, right, value, cover, d)


def predict_tree(tree: Tree, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_tree expects a single feature vector")
    return float(tree.predict(x[None, :])[0])


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _impurity(criterion, wsum, s1, s2):
    # gini: s1 = weighted count of class 1; squared error: s1, s2 = weighted
    # sums of the centered target and its square.
    if wsum <= 0.0:
        return 0.0
    if criterion == GINI:
        p1 = s1 / wsum
        p0 = 1.0 - p1
        return 1.0 - p0 * p0 - p1 * p1
    mean = s1 / wsum
    var = s2 / wsum - mean * mean
    return var if var > 0.0 else 0.0


@njit(cache=True)
def _node_stats(y, w, idx, criterion):
    wsum = 0.0
    ysum = 0.0
    for k in range(idx.shape[0]):
        wsum += w[idx[k]]
        ysum += w[idx[k]] * y[idx[k]]
    center = ysum / wsum if criterion == SQUARED_ERROR else 0.0
    p1 = 0.0
    p2 = 0.0
    for k in range(idx.shape[0]):
        r = y[idx[k]] - center
        p1 += w[idx[k]] * r
        p2 += w[idx[k]] * r * r
    return wsum, center, p1, p2


@njit(cache=True)
def _scan(X, y, w, rows, f, criterion, wsum, center, p1, p2, parent, best_f, best_thr, best_dec):
    # rows: node rows sorted by X[:, f]
    n = rows.shape[0]
    lw = 0.0
    l1 = 0.0
    l2 = 0.0
    for k in range(n - 1):
        row = rows[k]
        r = y[row] - center
        lw += w[row]
        l1 += w[row] * r
        l2 += w[row] * r * r
        v = X[row, f]
        v_next = X[rows[k + 1], f]
        if v == v_next:
            continue
        rw = wsum - lw
        if lw <= 0.0 or rw <= 0.0:
            continue
        child = (lw / wsum) * _impurity(criterion, lw, l1, l2) + (rw / wsum) * _impurity(
            criterion, rw, p1 - l1, p2 - l2
        )
        dec = parent - child
        if dec > best_dec + (_SPLIT_TOL if best_f >= 0 else 0.0):
            thr = (v + v_next) / 2.0
            if thr >= v_next:
                thr = v
            best_f = f
            best_thr = thr
            best_dec = dec
    return best_f, best_thr, best_dec


@njit(cache=True)
def _node_split(X, y, w, idx, feats, criterion):
    wsum, center, p1, p2 = _node_stats(y, w, idx, criterion)
    parent = _impurity(criterion, wsum, p1, p2)
    best_f = -1
    best_thr = 0.0
    best_dec = _SPLIT_TOL
    n = idx.shape[0]
    vals = np.empty(n)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for k in range(n):
            vals[k] = X[idx[k], f]
        rows = idx[np.argsort(vals, kind="mergesort")]
        if X[rows[0], f] == X[rows[n - 1], f]:
            continue
        best_f, best_thr, best_dec = _scan(
            X, y, w, rows, f, criterion, wsum, center, p1, p2, parent, best_f, best_thr, best_dec
        )
    return best_f, best_thr, best_dec


@njit(cache=True)
def _node_split_presorted(X, y, w, idx, feats, criterion, order, member):
    # order[f] lists all rows sorted by feature f; member flags the node's rows
    wsum, center, p1, p2 = _node_stats(y, w, idx, criterion)
    parent = _impurity(criterion, wsum, p1, p2)
    best_f = -1
    best_thr = 0.0
    best_dec = _SPLIT_TOL
    n = idx.shape[0]
    for k in range(n):
        member[idx[k]] = True
    rows = np.empty(n, dtype=np.int64)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        j = 0
        for k in range(order.shape[1]):
            r = order[f, k]
            if member[r]:
                rows[j] = r
                j += 1
        if X[rows[0], f] == X[rows[n - 1], f]:
            continue
        best_f, best_thr, best_dec = _scan(
            X, y, w, rows, f, criterion, wsum, center, p1, p2, parent, best_f, best_thr, best_dec
        )
    for k in range(n):
        member[idx[k]] = False
    return best_f, best_thr, best_dec


@njit(cache=True)
def _draw_features(X, idx, d, n_sub):
    # Fisher-Yates over the feature indices, stopping once n_sub features
    # that vary inside the node have been found.
    perm = np.arange(d)
    chosen = np.empty(d, dtype=np.int64)
    n_chosen = 0
    for j in range(d):
        k = j + np.random.randint(0, d - j)
        tmp = perm[j]
        perm[j] = perm[k]
        perm[k] = tmp
        f = perm[j]
        first = X[idx[0], f]
        varies = False
        for t in range(1, idx.shape[0]):
            if X[idx[t], f] != first:
                varies = True
                break
        if varies:
            chosen[n_chosen] = f
            n_chosen += 1
            if n_chosen == n_sub:
                break
    return np.sort(chosen[:n_chosen])


@njit(cache=True)
def _build(X, y, w, presorted, max_depth, min_samples_split, n_sub, criterion, seed):
    np.random.seed(seed)
    n_rows, d = X.shape
    n_active = 0
    for i in range(n_rows):
        if w[i] > 0.0:
            n_active += 1
    samples = np.empty(n_active, dtype=np.int64)
    j = 0
    for i in range(n_rows):
        if w[i] > 0.0:
            samples[j] = i
            j += 1

    cap = 2 * n_active + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    all_feats = np.arange(d)

    # stack entries: start, end, depth, parent, is_left
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_parent = np.empty(cap, dtype=np.int64)
    st_left = np.empty(cap, dtype=np.bool_)
    top = 0
    st_start[0] = 0
    st_end[0] = n_active
    st_depth[0] = 0
    st_parent[0] = -1
    st_left[0] = True
    top = 1
    n_nodes = 0
    buf = np.empty(n_active, dtype=np.int64)
    member = np.zeros(n_rows, dtype=np.bool_)
    order = np.empty((d, n_active), dtype=np.int64)
    for f in range(d):
        j = 0
        for k in range(n_rows):
            r = presorted[f, k]
            if w[r] > 0.0:
                order[f, j] = r
                j += 1

    while top > 0:
        top -= 1
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        parent = st_parent[top]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if st_left[top]:
                left[parent] = node
            else:
                right[parent] = node

        idx = samples[start:end]
        wsum = 0.0
        ysum = 0.0
        ymin = np.inf
        ymax = -np.inf
        for k in range(idx.shape[0]):
            r = idx[k]
            wsum += w[r]
            ysum += w[r] * y[r]
            if y[r] < ymin:
                ymin = y[r]
            if y[r] > ymax:
                ymax = y[r]
        cover[node] = wsum
        value[node] = ysum / wsum

        if (max_depth >= 0 and depth >= max_depth) or wsum < min_samples_split:
            continue
        if ymin == ymax or idx.shape[0] < 2:
            continue
        if n_sub < d:
            feats = _draw_features(X, idx, d, n_sub)
            if feats.shape[0] == 0:
                continue
        else:
            feats = all_feats
        if idx.shape[0] * 16 >= n_active:
            f, thr, dec = _node_split_presorted(X, y, w, idx, feats, criterion, order, member)
        else:
            f, thr, dec = _node_split(X, y, w, idx, feats, criterion)
        if f < 0:
            continue

        # stable partition: rows going left first, original order kept
        n_left = 0
        n_right = 0
        for k in range(idx.shape[0]):
            if X[idx[k], f] <= thr:
                samples[start + n_left] = idx[k]
                n_left += 1
            else:
                buf[n_right] = idx[k]
                n_right += 1
        for k in range(n_right):
            samples[start + n_left + k] = buf[k]
        feature[node] = f
        threshold[node] = thr
        mid = start + n_left

        # push right first so the left subtree is numbered first
        st_start[top] = mid
        st_end[top] = end
        st_depth[top] = depth + 1
        st_parent[top] = node
        st_left[top] = False
        top += 1
        st_start[top] = start
        st_end[top] = mid
        st_depth[top] = depth + 1
        st_parent[top] = node
        st_left[top] = True
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        cover[:n_nodes].copy(),
    )


@njit(cache=True)
def _predict_values(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out
