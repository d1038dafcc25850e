import json
from pathlib import Path

import numpy as np
import pytest

from mfagl.baselines import (
    ArRegressor,
    LabelForecaster,
    RandomForestRegressor,
    RegressionTree,
    fit_ar,
    fit_rf,
    lag_table,
    predict_ar,
    predict_rf,
)
from mfagl.regions import period_range

FIXTURES = Path(__file__).parent / "fixtures"


def series_labels(values, area="P", start="2015-01"):
    periods = period_range(start, "2100-01")[: len(values)]
    return {(area, t): float(v) for t, v in zip(periods, values)}


def ar1_labels(phi=0.5, n=40, areas=("A", "B", "C"), seed=0):
    rng = np.random.default_rng(seed)
    labels = {}
    for a in areas:
        y = [float(rng.uniform(50, 150))]
        for _ in range(n - 1):
            y.append(phi * y[-1])
        labels.update(series_labels(y, a))
    return labels


# -- AR ---------------------------------------------------------------------------------------


def test_constant_series_forecast_equals_constant():
    labels = series_labels([42.0] * 20)
    model = fit_ar(labels, lag_order=11)
    assert predict_ar(model, [42.0] * 11) == pytest.approx(42.0, rel=1e-6)
    assert model.ridge_used_ > 0  # constant columns make the Gram matrix singular


def test_ar1_coefficients_recovered():
    labels = {}
    rng = np.random.default_rng(1)
    for a in "ABC":
        y = [float(rng.uniform(50, 150))]
        for _ in range(39):
            y.append(0.5 * y[-1] + rng.normal(0, 1.0))
        labels.update(series_labels(y, a))
    noiseless = ar1_labels(0.5, n=12, areas=tuple("ABCDEFGHIJKLMNOPQRST"))
    model = fit_ar(noiseless, lag_order=1)
    assert model.coef_[0] == pytest.approx(0.5, abs=1e-6)
    assert abs(model.intercept_) < 1e-6
    # with 11 lags and noise the lag-1 weight still dominates
    model11 = fit_ar(labels, lag_order=11)
    assert model11.coef_[0] == pytest.approx(0.5, abs=0.25)


def test_ar_orthogonal_residuals():
    rng = np.random.default_rng(2)
    labels = {}
    for a in "ABCD":
        labels.update(series_labels(rng.uniform(10, 100, 30), a))
    _, X, y = lag_table(labels, 11)
    model = ArRegressor(lag_order=11).fit(X, y)
    assert model.ridge_used_ == 0.0
    A = np.hstack([np.ones((len(y), 1)), X])
    resid = y - model.predict(X)
    assert np.max(np.abs(A.T @ resid)) <= 1e-8 * np.max(np.abs(A.T @ y))


def test_ar_requires_enough_history():
    with pytest.raises(ValueError, match="insufficient history"):
        fit_ar(series_labels(range(1, 12)), lag_order=11)
    fit_ar(series_labels(range(1, 13)), lag_order=11)  # 12 months is the minimum


def test_predict_ar_hand_examples():
    m = ArRegressor(lag_order=3)
    m.coef_, m.intercept_ = np.zeros(3), 5.0
    assert predict_ar(m, [1.0, 2.0, 3.0]) == 5.0
    m.coef_, m.intercept_ = np.array([1.0, 0.0, 0.0]), 0.5
    assert predict_ar(m, [7.0, 8.0, 42.0]) == 42.5  # newest last, lag 1 picks it
    with pytest.raises(ValueError):
        predict_ar(m, [1.0, 2.0])


def test_fitted_ar_one_step_matches_dot_product():
    model = fit_ar(ar1_labels(0.8, n=30), lag_order=2)
    recent = [10.0, 20.0]
    assert predict_ar(model, recent) == pytest.approx(
        model.intercept_ + model.coef_[0] * 20.0 + model.coef_[1] * 10.0, rel=1e-14
    )


def test_unpooled_ar_fits_each_area():
    models = fit_ar(ar1_labels(0.5, n=20), lag_order=1, pooled=False)
    assert set(models) == {"A", "B", "C"}
    for m in models.values():
        assert m.coef_[0] == pytest.approx(0.5, abs=1e-6)


def test_lag_table_layout():
    keys, X, y = lag_table(series_labels([1, 2, 3, 4, 5]), 2)
    assert keys[0] == ("P", "2015-03")
    np.testing.assert_array_equal(X, [[2, 1], [3, 2], [4, 3]])
    np.testing.assert_array_equal(y, [3, 4, 5])


# -- random forest ------------------------------------------------------------------------------


def test_depth_zero_tree_predicts_global_mean():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
    m = RandomForestRegressor(n_trees=5, max_depth=0, bootstrap=False).fit(X, y)
    np.testing.assert_allclose(m.predict(X), np.full(50, y.mean()), rtol=1e-14)
    assert all(t.depth == 0 for t in m.trees_)


def test_identical_rows_predict_their_target():
    X = np.ones((20, 4))
    m = fit_rf(X, np.full(20, 3.25), {"n_trees": 7, "seed": 1})
    assert predict_rf(m, np.ones(4)) == 3.25
    assert predict_rf(m, np.zeros(4)) == 3.25


def test_step_function_is_learned():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (200, 1))
    y = (x[:, 0] > 0).astype(float)
    m = RandomForestRegressor(n_trees=20, seed=0).fit(x, y)
    xt = rng.uniform(-1, 1, (500, 1))
    mse = np.mean((m.predict(xt) - (xt[:, 0] > 0)) ** 2)
    assert mse < 0.05


def test_forest_averages_trees():
    leaf = lambda v: RegressionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([v]))
    m = RandomForestRegressor(n_trees=1)
    m.trees_, m.n_features_in_ = [leaf(3.0)], 2
    assert predict_rf(m, [0.0, 1.0]) == 3.0
    m.trees_ = [leaf(2.0), leaf(4.0)]
    assert predict_rf(m, [0.0, 1.0]) == 3.0


def test_golden_forest_fixture():
    doc = json.loads((FIXTURES / "rf_golden.json").read_text())
    m = RandomForestRegressor(**doc["params"]).fit(np.array(doc["X"]), np.array(doc["y"]))
    np.testing.assert_allclose(m.predict(np.array(doc["X_test"])), doc["predictions"], rtol=1e-12)


def test_tree_order_does_not_change_prediction():
    rng = np.random.default_rng(4)
    X, y = rng.normal(size=(80, 5)), rng.normal(size=80)
    m = RandomForestRegressor(n_trees=12, seed=2).fit(X, y)
    before = m.predict(X)
    m.trees_ = m.trees_[::-1]
    np.testing.assert_allclose(m.predict(X), before, rtol=1e-13)


def test_training_mse_non_increasing_in_depth():
    rng = np.random.default_rng(5)
    X = rng.uniform(-2, 2, (150, 4))
    y = np.sin(2 * X[:, 0]) + X[:, 1] * X[:, 2] + rng.normal(0, 0.1, 150)
    for bootstrap in (False, True):
        mses = []
        for depth in range(0, 9):
            m = RandomForestRegressor(n_trees=10, max_depth=depth, seed=3, bootstrap=bootstrap).fit(X, y)
            mses.append(float(np.mean((m.predict(X) - y) ** 2)))
        assert all(b <= a + 1e-12 for a, b in zip(mses, mses[1:])), mses


def test_parallel_fit_matches_sequential():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(60, 3)), rng.normal(size=60)
    a = RandomForestRegressor(n_trees=6, seed=4).fit(X, y)
    b = RandomForestRegressor(n_trees=6, seed=4, n_jobs=2).fit(X, y)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_splits_stay_inside_schema():
    rng = np.random.default_rng(7)
    X, y = rng.normal(size=(60, 3)), rng.normal(size=60)
    m = RandomForestRegressor(n_trees=5).fit(X, y)
    for t in m.trees_:
        assert ((t.feature == -1) | ((t.feature >= 0) & (t.feature < 3))).all()
        assert np.isfinite(t.value).all()


def test_rf_errors():
    with pytest.raises(ValueError, match="empty"):
        fit_rf(np.zeros((0, 3)), np.zeros(0))
    m = fit_rf(np.ones((4, 3)), np.ones(4), {"n_trees": 2})
    with pytest.raises(ValueError):
        predict_rf(m, [1.0, 2.0])


# -- label forecaster ---------------------------------------------------------------------------


def test_forecaster_recursive_multi_step():
    labels = ar1_labels(0.9, n=24)
    f = LabelForecaster(kind="ar", lag_order=2).fit(labels)
    last = max(t for _, t in labels)
    # two steps ahead of the last label: feed the one-step forecast back in
    series = [v for (a, t), v in sorted(labels.items()) if a == "A"]
    one = predict_ar(f.model_, series[-2:])
    two = predict_ar(f.model_, [series[-1], one])
    from mfagl.regions import shift_period

    assert f.forecast(labels, "A", shift_period(last, 2)) == pytest.approx(two, rel=1e-12)


def test_forecaster_ignores_labels_at_or_after_target():
    labels = ar1_labels(0.9, n=24)
    f = LabelForecaster(kind="ar", lag_order=2).fit(labels)
    target = sorted(t for _, t in labels)[-1]
    poisoned = {**labels, ("A", target): 1e9}
    assert f.forecast(labels, "A", target) == f.forecast(poisoned, "A", target)


def test_rf_forecaster_uses_dummies_and_rejects_unseen_area():
    rng = np.random.default_rng(8)
    labels = {}
    for a in "AB":
        labels.update(series_labels(rng.uniform(10, 20, 30), a))
    f = LabelForecaster(kind="rf", lag_order=3, rf_params={"n_trees": 5}).fit(labels)
    assert f.model_.n_features_in_ == 3 + len(f.years_) + 12 + 2
    assert np.isfinite(f.forecast(labels, "A", "2017-07"))
    with pytest.raises(KeyError):
        f.forecast({**labels, **series_labels(range(30), "Z")}, "Z", "2017-07")
