"""KDE curves, TreeSHAP attributions, partial dependence and monthly shares."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .models import GradientBoosting, RandomForest
from .trees import LEAF

_SQRT_2PI = math.sqrt(2.0 * math.pi)


# KDE ---------------------------------------------------------------------


@dataclass
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    sample_count: int


def silverman_bandwidth(samples) -> float:
    """``1.06 * std * n**(-1/5)`` with the sample (ddof=1) standard deviation."""
    samples = np.asarray(samples, dtype=np.float64)
    sigma = samples.std(ddof=1)
    if not sigma > 0:
        raise ValueError("samples have zero variance; pass an explicit bandwidth")
    return float(1.06 * sigma * len(samples) ** (-0.2))


def default_kde_grid(samples, bandwidth, n_points=512) -> np.ndarray:
    """Evenly spaced grid reaching four bandwidths past the data range."""
    samples = np.asarray(samples, dtype=np.float64)
    return np.linspace(samples.min() - 4 * bandwidth, samples.max() + 4 * bandwidth, n_points)


def kde(samples, bandwidth=None, grid=None) -> KdeCurve:
    """Gaussian kernel density estimate evaluated on ``grid``."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if bandwidth is None:
        if samples.size < 2:
            raise ValueError("need at least two samples for an automatic bandwidth")
        bandwidth = silverman_bandwidth(samples)
    elif samples.size < 1:
        raise ValueError("need at least one sample")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if grid is None:
        grid = default_kde_grid(samples, bandwidth)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    density = np.empty(grid.size)
    # chunked to bound memory on large samples
    for start in range(0, grid.size, 256):
        u = (grid[start : start + 256, None] - samples[None, :]) / bandwidth
        density[start : start + 256] = np.exp(-0.5 * u * u).sum(axis=1)
    density /= samples.size * bandwidth * _SQRT_2PI
    return KdeCurve(grid, density, float(bandwidth), int(samples.size))


# TreeSHAP ----------------------------------------------------------------


def _ensemble_parts(model):
    if isinstance(model, RandomForest):
        trees = model.trees_
        scales = np.full(len(trees), 1.0 / len(trees))
        offset = 0.0
    elif isinstance(model, GradientBoosting):
        trees = model.trees_
        scales = np.asarray(model.stage_weights_, dtype=np.float64)
        offset = model.base_score_
    else:
        raise TypeError(f"TreeSHAP needs a tree ensemble, got {type(model).__name__}")
    return trees, scales, offset


def _flatten(trees):
    starts = np.cumsum([0] + [t.node_count for t in trees[:-1]]).astype(np.int64)

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

    children = [
        [np.where(getattr(t, side) >= 0, getattr(t, side) + s, -1) for t, s in zip(trees, starts)]
        for side in ("left", "right")
    ]
    return (
        cat([t.feature for t in trees], np.int64),
        cat([t.threshold for t in trees], np.float64),
        cat(children[0], np.int64),
        cat(children[1], np.int64),
        cat([t.value for t in trees], np.float64),
        cat([t.cover for t in trees], np.float64),
        starts,
        max((t.max_depth for t in trees), default=0),
    )


def expected_output(model) -> float:
    """Cover-weighted expectation of the ensemble's explained output."""
    trees, scales, offset = _ensemble_parts(model)
    return float(offset + sum(s * t.expected_value() for s, t in zip(scales, trees)))


def tree_shap(model, X):
    """Path-dependent TreeSHAP values for a forest or boosted ensemble.

    Returns ``(phi, base_value)`` where ``phi`` has one row per input row.
    Forests are explained on their mean leaf fraction; boosted models on
    their log-odds score.  ``base_value + phi.sum(axis=1)`` reproduces that
    output.
    """
    trees, scales, offset = _ensemble_parts(model)
    for t in trees:
        if t.cover is None or not np.all(t.cover > 0):
            raise ValueError("tree is missing cover statistics")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.ascontiguousarray(np.atleast_2d(X))
    if X.shape[1] != model.n_features_in_:
        raise ValueError(f"expected {model.n_features_in_} features, got {X.shape[1]}")
    feature, threshold, left, right, value, cover, starts, depth = _flatten(trees)
    phi = _shap_rows(feature, threshold, left, right, value, cover, starts, scales, depth, X)
    base = expected_output(model)
    return (phi[0] if single else phi), base


def explained_output(model, X) -> np.ndarray:
    """The quantity TreeSHAP decomposes: probability (forest) or log-odds (boosting)."""
    if isinstance(model, GradientBoosting):
        return model.decision_function(X)
    return model.positive_proba(X)


@njit(cache=True)
def _extend(feat, zf, of, pw, start, depth, zero_fraction, one_fraction, feature_index):
    feat[start + depth] = feature_index
    zf[start + depth] = zero_fraction
    of[start + depth] = one_fraction
    pw[start + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[start + i + 1] += one_fraction * pw[start + i] * (i + 1) / (depth + 1)
        pw[start + i] = zero_fraction * pw[start + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(feat, zf, of, pw, start, depth, path_index):
    one_fraction = of[start + path_index]
    zero_fraction = zf[start + path_index]
    next_one = pw[start + depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[start + i]
            pw[start + i] = next_one * (depth + 1) / ((i + 1) * one_fraction)
            next_one = tmp - pw[start + i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[start + i] = pw[start + i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(path_index, depth):
        feat[start + i] = feat[start + i + 1]
        zf[start + i] = zf[start + i + 1]
        of[start + i] = of[start + i + 1]


@njit(cache=True)
def _unwound_sum(zf, of, pw, start, depth, path_index):
    one_fraction = of[start + path_index]
    zero_fraction = zf[start + path_index]
    next_one = pw[start + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = next_one * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            next_one = pw[start + i] - tmp * zero_fraction * (depth - i) / (depth + 1)
        else:
            total += pw[start + i] / zero_fraction / ((depth - i) / (depth + 1))
    return total


@njit(cache=True)
def _tree_shap_one(
    root, feature, threshold, left, right, value, cover, x, phi, scale, feat, zf, of, pw, max_depth
):
    # Explicit stack instead of recursion (cached recursive kernels crash on
    # reload).  A frame's path lives at [start, start + depth]; descendants
    # only write past it, so sibling order does not matter.
    cap = 2 * max_depth + 4
    s_node = np.empty(cap, dtype=np.int64)
    s_parent = np.empty(cap, dtype=np.int64)
    s_depth = np.empty(cap, dtype=np.int64)
    s_zero = np.empty(cap)
    s_one = np.empty(cap)
    s_feat = np.empty(cap, dtype=np.int64)
    s_node[0] = root
    s_parent[0] = 0
    s_depth[0] = 0
    s_zero[0] = 1.0
    s_one[0] = 1.0
    s_feat[0] = -1
    top = 1
    while top > 0:
        top -= 1
        node = s_node[top]
        parent_start = s_parent[top]
        depth = s_depth[top]
        start = parent_start + depth + 1
        for i in range(depth + 1):
            feat[start + i] = feat[parent_start + i]
            zf[start + i] = zf[parent_start + i]
            of[start + i] = of[parent_start + i]
            pw[start + i] = pw[parent_start + i]
        _extend(feat, zf, of, pw, start, depth, s_zero[top], s_one[top], s_feat[top])

        f = feature[node]
        if f == LEAF:
            for i in range(1, depth + 1):
                w = _unwound_sum(zf, of, pw, start, depth, i)
                phi[feat[start + i]] += w * (of[start + i] - zf[start + i]) * value[node] * scale
            continue

        if x[f] <= threshold[node]:
            hot = left[node]
            cold = right[node]
        else:
            hot = right[node]
            cold = left[node]
        incoming_zero = 1.0
        incoming_one = 1.0
        path_index = 0
        for k in range(1, depth + 1):
            if feat[start + k] == f:
                path_index = k
                break
        if path_index != 0:
            incoming_zero = zf[start + path_index]
            incoming_one = of[start + path_index]
            _unwind(feat, zf, of, pw, start, depth, path_index)
            depth -= 1
        s_node[top] = cold
        s_parent[top] = start
        s_depth[top] = depth + 1
        s_zero[top] = cover[cold] / cover[node] * incoming_zero
        s_one[top] = 0.0
        s_feat[top] = f
        top += 1
        s_node[top] = hot
        s_parent[top] = start
        s_depth[top] = depth + 1
        s_zero[top] = cover[hot] / cover[node] * incoming_zero
        s_one[top] = incoming_one
        s_feat[top] = f
        top += 1


@njit(cache=True)
def _shap_rows(feature, threshold, left, right, value, cover, starts, scales, max_depth, X):
    n, d = X.shape
    phi = np.zeros((n, d))
    size = (max_depth + 3) * (max_depth + 4) // 2 + 4
    feat = np.zeros(size, dtype=np.int64)
    zf = np.zeros(size)
    of = np.zeros(size)
    pw = np.zeros(size)
    for r in range(n):
        for t in range(starts.shape[0]):
            _tree_shap_one(
                starts[t],
                feature,
                threshold,
                left,
                right,
                value,
                cover,
                X[r],
                phi[r],
                scales[t],
                feat,
                zf,
                of,
                pw,
                max_depth,
            )
    return phi


@dataclass
class ShapSummary:
    feature_names: tuple
    values: np.ndarray
    shap_values: np.ndarray
    base_value: float
    ranking: list = field(default_factory=list)

    def mean_abs(self) -> np.ndarray:
        return np.abs(self.shap_values).mean(axis=0)

    def pairs(self, j: int) -> list[tuple[float, float]]:
        """(feature value, SHAP value) pairs for feature ``j`` across rows."""
        return list(zip(self.values[:, j].tolist(), self.shap_values[:, j].tolist()))


def shap_summary(model, X, feature_names=None) -> ShapSummary:
    """TreeSHAP on every row of ``X`` plus a mean-|phi| ranking (largest first)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    phi, base = tree_shap(model, X)
    names = (
        tuple(feature_names)
        if feature_names is not None
        else tuple(f"x{j}" for j in range(X.shape[1]))
    )
    importance = np.abs(phi).mean(axis=0)
    order = sorted(range(X.shape[1]), key=lambda j: (-importance[j], j))
    ranking = [(names[j], float(importance[j])) for j in order]
    return ShapSummary(names, X, phi, base, ranking)


# Partial dependence ------------------------------------------------------


@dataclass
class PdpCurve:
    feature_index: int
    grid: np.ndarray
    mean_prediction: np.ndarray


def default_pdp_grid(X, feature_index, n_points=50) -> np.ndarray:
    """Evenly spaced points between the 1st and 99th percentile."""
    col = np.asarray(X, dtype=np.float64)[:, feature_index]
    lo, hi = np.percentile(col, [1, 99])
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, n_points)


def pdp(model, X, feature_index: int, grid=None) -> PdpCurve:
    """Mean predicted probability with one feature overwritten by each grid value."""
    X = np.array(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("need a non-empty 2-D dataset")
    if grid is None:
        grid = default_pdp_grid(X, feature_index)
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ValueError("empty PDP grid")
    means = np.empty(grid.size)
    for k, v in enumerate(grid):
        X[:, feature_index] = v
        means[k] = model.predict_proba(X)[:, 1].mean()
    return PdpCurve(int(feature_index), grid, means)


# Seasonality -------------------------------------------------------------


@dataclass
class MonthlyInclusion:
    released: np.ndarray
    charted: np.ndarray

    @property
    def share(self) -> np.ndarray:
        """Charted share per month (index 0 = January); NaN where undefined."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.released > 0, self.charted / np.maximum(self.released, 1), np.nan)

    @property
    def undefined(self) -> list[int]:
        return [m + 1 for m in range(12) if self.released[m] == 0]

    def rows(self):
        for m in range(12):
            share = None if self.released[m] == 0 else float(self.charted[m] / self.released[m])
            yield m + 1, int(self.released[m]), int(self.charted[m]), share


def monthly_inclusion(labeled) -> MonthlyInclusion:
    """Per release month counts of tracks and charted tracks.

    Tracks whose month was imputed from a year-only date are skipped.
    """
    released = np.zeros(12, dtype=np.int64)
    charted = np.zeros(12, dtype=np.int64)
    for record, is_charted in labeled:
        if record.month_imputed:
            continue
        released[record.month - 1] += 1
        charted[record.month - 1] += bool(is_charted)
    return MonthlyInclusion(released, charted)
