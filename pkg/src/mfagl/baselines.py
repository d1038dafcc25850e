"""Comparison models that see only the coarse labels.

* :class:`ArRegressor` - pooled autoregression on the last ``lag_order``
  monthly labels with an intercept, solved through the normal equations.
* :class:`RandomForestRegressor` - bagged CART regression trees.

Both follow the scikit-learn estimator protocol.  :class:`LabelForecaster`
wraps either one to forecast a large area's label for a target month from the
labels released so far.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .regions import shift_period

__all__ = [
    "ArRegressor",
    "RandomForestRegressor",
    "RegressionTree",
    "LabelForecaster",
    "lag_table",
    "fit_ar",
    "predict_ar",
    "fit_rf",
    "predict_rf",
]


# -- lag design -------------------------------------------------------------


def _consecutive_runs(periods):
    runs, current = [], []
    for t in sorted(periods):
        if current and shift_period(current[-1], 1) != t:
            runs.append(current)
            current = []
        current.append(t)
    if current:
        runs.append(current)
    return runs


def lag_table(labels: Mapping[tuple[str, str], float], lag_order: int, large_areas=None):
    """Stack ``(y_t; y_{t-1}, ..., y_{t-lag_order})`` rows over every large area.

    Returns ``(keys, X, y)``; column 0 of ``X`` is the most recent lag.
    Raises when no area has ``lag_order + 1`` consecutive labeled months.
    """
    if lag_order < 1:
        raise ValueError("lag_order must be >= 1")
    by_area: dict[str, dict[str, float]] = {}
    for (p, t), v in labels.items():
        by_area.setdefault(p, {})[t] = float(v)
    areas = list(large_areas) if large_areas is not None else sorted(by_area)
    keys, rows, targets = [], [], []
    longest = 0
    for p in areas:
        series = by_area.get(p, {})
        for run in _consecutive_runs(series):
            longest = max(longest, len(run))
            for k in range(lag_order, len(run)):
                keys.append((p, run[k]))
                rows.append([series[run[k - j]] for j in range(1, lag_order + 1)])
                targets.append(series[run[k]])
    if not rows:
        raise ValueError(
            f"insufficient history: need {lag_order + 1} consecutive labeled months, longest run is {longest}"
        )
    return keys, np.array(rows), np.array(targets)


# -- autoregression ------------------------------------------------------------


class ArRegressor(BaseEstimator, RegressorMixin):
    """Linear model on lagged labels, ``y_t = c + sum_j a_j y_{t-j}``.

    Columns of ``X`` are lags ordered newest first.  When the Gram matrix is
    singular a ridge of ``ridge * I`` is added before solving.
    """

    def __init__(self, lag_order=11, fit_intercept=True, ridge=1e-8):
        self.lag_order = lag_order
        self.fit_intercept = fit_intercept
        self.ridge = ridge

    def _design(self, X):
        if self.fit_intercept:
            return np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.shape[1] != self.lag_order:
            raise ValueError(f"expected {self.lag_order} lag columns, got {X.shape[1]}")
        A = self._design(X)
        gram = A.T @ A
        rhs = A.T @ y
        self.ridge_used_ = 0.0
        if np.linalg.matrix_rank(gram) < gram.shape[0]:
            self.ridge_used_ = self.ridge
            gram = gram + self.ridge * np.eye(gram.shape[0])
        beta = np.linalg.solve(gram, rhs)
        self.intercept_ = float(beta[0]) if self.fit_intercept else 0.0
        self.coef_ = beta[1:] if self.fit_intercept else beta
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.coef_.shape[0]:
            raise ValueError(f"expected {self.coef_.shape[0]} lag columns, got {X.shape[1]}")
        return self.intercept_ + X @ self.coef_


def fit_ar(labels: Mapping[tuple[str, str], float], lag_order: int = 11, pooled: bool = True, **params):
    """Fit one pooled AR model, or one per large area when ``pooled`` is false."""
    if pooled:
        _, X, y = lag_table(labels, lag_order)
        return ArRegressor(lag_order=lag_order, **params).fit(X, y)
    areas = sorted({p for p, _ in labels})
    out = {}
    for p in areas:
        _, X, y = lag_table({k: v for k, v in labels.items() if k[0] == p}, lag_order)
        out[p] = ArRegressor(lag_order=lag_order, **params).fit(X, y)
    return out


def predict_ar(model: ArRegressor, recent) -> float:
    """One-step forecast from the last ``lag_order`` labels given oldest first."""
    recent = np.asarray(recent, dtype=np.float64)
    if recent.ndim != 1 or recent.shape[0] != model.lag_order:
        raise ValueError(f"expected exactly {model.lag_order} recent values, got {recent.shape}")
    return float(model.predict(recent[::-1][None, :])[0])


# -- CART and the forest ---------------------------------------------------------


@dataclass
class RegressionTree:
    """Axis-aligned regression tree stored as flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def _best_split(x, y, min_leaf):
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(ys)
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    n_left = np.arange(1, n)
    sum_left = csum[:-1]
    sum_right = csum[-1] - sum_left
    sse_left = csq[:-1] - sum_left**2 / n_left
    sse_right = (csq[-1] - csq[:-1]) - sum_right**2 / (n - n_left)
    sse = sse_left + sse_right
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf)
    i = int(np.argmin(sse))
    mid = 0.5 * (xs[i] + xs[i + 1])
    return float(sse[i]), (mid if mid < xs[i + 1] else float(xs[i]))


def _grow_tree(X, y, max_depth, min_leaf, mtry, rng) -> RegressionTree:
    """Breadth-first growth, so a deeper tree refines the shallower one grown from the same seed."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[idx])))
        return len(feature) - 1

    queue = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    d = X.shape[1]
    while queue:
        next_queue = []
        for node, idx, depth in queue:
            yi = y[idx]
            if depth >= max_depth or len(idx) < 2 * min_leaf or np.ptp(yi) == 0:
                continue
            parent_sse = float(np.sum((yi - yi.mean()) ** 2))
            best = None
            for f in rng.choice(d, size=min(mtry, d), replace=False):
                found = _best_split(X[idx, f], yi, min_leaf)
                if found is not None and (best is None or found[0] < best[0]):
                    best = (found[0], int(f), found[1])
            if best is None or best[0] >= parent_sse * (1 - 1e-12):
                continue
            _, f, thr = best
            mask = X[idx, f] <= thr
            li, ri = idx[mask], idx[~mask]
            feature[node], threshold[node] = f, thr
            left[node] = new_node(li)
            right[node] = new_node(ri)
            next_queue += [(left[node], li, depth + 1), (right[node], ri, depth + 1)]
        queue = next_queue
    return RegressionTree(
        np.array(feature, dtype=int),
        np.array(threshold),
        np.array(left, dtype=int),
        np.array(right, dtype=int),
        np.array(value),
    )


def _fit_one_tree(X, y, seed_seq, bootstrap, max_depth, min_leaf, mtry):
    rng = np.random.default_rng(seed_seq)
    n = len(y)
    idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    return _grow_tree(X[idx], y[idx], max_depth, min_leaf, mtry, rng)


class RandomForestRegressor(BaseEstimator, RegressorMixin):
    """Bagged CART regression trees with per-node feature subsampling.

    Every tree gets its own seed spawned from ``seed``, so fitting with
    ``n_jobs > 1`` yields the same forest as sequential fitting.
    ``mtry=None`` samples ``ceil(sqrt(n_features))`` features per node.
    """

    def __init__(self, n_trees=100, max_depth=8, min_leaf=2, mtry=None, bootstrap=True, seed=0, n_jobs=1):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.bootstrap = bootstrap
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=True)
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError("n_trees >= 1, max_depth >= 0 and min_leaf >= 1 are required")
        d = X.shape[1]
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(d))
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        args = (self.bootstrap, self.max_depth, self.min_leaf, mtry)
        if self.n_jobs == 1:
            trees = [_fit_one_tree(X, y, s, *args) for s in seeds]
        else:
            trees = Parallel(n_jobs=self.n_jobs)(delayed(_fit_one_tree)(X, y, s, *args) for s in seeds)
        self.trees_ = trees
        self.mtry_ = mtry
        self.n_features_in_ = d
        return self

    def predict(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.mean([tree.predict(X) for tree in self.trees_], axis=0)


def fit_rf(rows, targets, config: Mapping | None = None) -> RandomForestRegressor:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("empty training set")
    return RandomForestRegressor(**dict(config or {})).fit(rows, targets)


def predict_rf(model: RandomForestRegressor, row) -> float:
    return float(model.predict(np.asarray(row, dtype=np.float64)[None, :])[0])


# -- label forecasting --------------------------------------------------------------


class LabelForecaster(BaseEstimator):
    """Forecast a large area's monthly label from its own released history.

    ``kind="ar"`` uses lags only; ``kind="rf"`` adds year, month and
    large-area one-hot columns.  Targets more than one month past the last
    released label are reached by feeding forecasts back in as lags.
    """

    def __init__(self, kind="ar", lag_order=11, pooled=True, rf_params=None):
        self.kind = kind
        self.lag_order = lag_order
        self.pooled = pooled
        self.rf_params = rf_params

    def _dummies(self, p, t):
        year, month = int(t[:4]), int(t[5:7])
        if year not in self.years_:
            raise ValueError(f"year {year} not in training vocabulary {self.years_}")
        if p not in self.areas_:
            raise KeyError(f"large area {p!r} not in training vocabulary")
        v = np.zeros(len(self.years_) + 12 + len(self.areas_))
        v[self.years_.index(year)] = 1.0
        v[len(self.years_) + month - 1] = 1.0
        v[len(self.years_) + 12 + self.areas_.index(p)] = 1.0
        return v

    def _row(self, p, t, lags_newest_first):
        if self.kind == "ar":
            return np.asarray(lags_newest_first, dtype=float)
        return np.concatenate([lags_newest_first, self._dummies(p, t)])

    def fit(self, labels: Mapping[tuple[str, str], float]):
        if self.kind not in ("ar", "rf"):
            raise ValueError(f"kind must be 'ar' or 'rf', got {self.kind!r}")
        keys, X, y = lag_table(labels, self.lag_order)
        self.areas_ = sorted({p for p, _ in labels})
        self.years_ = sorted({int(t[:4]) for _, t in labels})
        if self.kind == "ar":
            if self.pooled:
                self.model_ = ArRegressor(lag_order=self.lag_order).fit(X, y)
            else:
                self.model_ = fit_ar(labels, self.lag_order, pooled=False)
        else:
            rows = np.array([self._row(p, t, x) for (p, t), x in zip(keys, X)])
            self.model_ = RandomForestRegressor(**dict(self.rf_params or {})).fit(rows, y)
        return self

    def _predict_row(self, p, row):
        model = self.model_[p] if isinstance(self.model_, dict) else self.model_
        return float(model.predict(row[None, :])[0])

    def forecast(self, labels: Mapping[tuple[str, str], float], p: str, target: str) -> float:
        """Forecast ``(p, target)`` from the labels of ``p`` released before ``target``."""
        check_is_fitted(self, "model_")
        series = {t: float(v) for (a, t), v in labels.items() if a == p and t < target}
        if not series:
            raise ValueError(f"no released labels for {p!r} before {target}")
        last = max(series)
        history = [series.get(shift_period(last, -j)) for j in range(self.lag_order - 1, -1, -1)]
        if any(v is None for v in history):
            raise ValueError(f"need {self.lag_order} consecutive labels for {p!r} ending {last}")
        t = last
        while t < target:
            t = shift_period(t, 1)
            lags = np.array(history[::-1][: self.lag_order])
            history.append(self._predict_row(p, self._row(p, t, lags)))
        return history[-1]
