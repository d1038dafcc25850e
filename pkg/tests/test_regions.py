from datetime import date, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfagl.regions import (
    FrequencyCalendar,
    MixedFrequencyPanel,
    RegionHierarchy,
    Vocabulary,
    build_feature_window,
    map_region,
    map_time,
    period_bounds,
    period_range,
    shift_period,
    validate_panel,
)

from conftest import make_panel


def test_map_region_two_cities():
    h = RegionHierarchy.from_pairs([("City1", "PrefA"), ("City2", "PrefA")])
    assert map_region(h, "City1") == "PrefA"
    assert h.children("PrefA") == ("City1", "City2")


def test_map_region_singleton_and_unknown():
    h = RegionHierarchy.from_pairs([("Solo", "Solo")])
    assert map_region(h, "Solo") == "Solo"
    with pytest.raises(KeyError, match="Nowhere"):
        map_region(h, "Nowhere")


def test_default_weight_is_exactly_one():
    h = RegionHierarchy.from_pairs([("a", "A"), ("b", "A")])
    assert h.weight_of["a"] == 1.0 and h.weight_of["b"] == 1.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(small_areas=("a",), large_areas=("A", "B"), parent_of={"a": "A"}),  # childless B
        dict(small_areas=("a",), large_areas=("A",), parent_of={}),  # orphan
        dict(small_areas=("a",), large_areas=("A",), parent_of={"a": "Z"}),  # unknown parent
        dict(small_areas=("a",), large_areas=("A",), parent_of={"a": "A"}, weight_of={"a": 1.5}),
        dict(small_areas=("a", "a"), large_areas=("A",), parent_of={"a": "A"}),
    ],
)
def test_hierarchy_rejects_broken_invariants(kwargs):
    with pytest.raises(ValueError):
        RegionHierarchy(**kwargs)


def test_map_time_examples():
    cal = FrequencyCalendar.for_periods("2020-01", "2020-02")
    assert map_time(cal, date(2020, 1, 15)) == "2020-01"
    assert map_time(cal, date(2020, 2, 29)) == "2020-02"
    with pytest.raises(KeyError):
        map_time(cal, date(2020, 3, 1))


def test_one_tick_per_period_calendar():
    ticks = (date(2020, 1, 31), date(2020, 2, 29), date(2020, 3, 31))
    cal = FrequencyCalendar(ticks, ("2020-01", "2020-02", "2020-03"), dict(zip(ticks, ("2020-01", "2020-02", "2020-03"))))
    assert [map_time(cal, t) for t in ticks] == ["2020-01", "2020-02", "2020-03"]


def test_calendar_rejects_non_monotone_and_empty_periods():
    a, b = date(2020, 1, 1), date(2020, 1, 2)
    with pytest.raises(ValueError, match="monotone"):
        FrequencyCalendar((a, b), ("t1", "t2"), {a: "t2", b: "t1"})
    with pytest.raises(ValueError, match="without ticks"):
        FrequencyCalendar((a,), ("t1", "t2"), {a: "t1"})


def test_period_helpers():
    assert shift_period("2020-11", 2) == "2021-01"
    assert shift_period("2020-01", -1) == "2019-12"
    assert period_range("2019-11", "2020-02") == ["2019-11", "2019-12", "2020-01", "2020-02"]
    assert period_bounds("2020-02") == (date(2020, 2, 1), date(2020, 2, 29))


def _panel_with_history(n_days, tau):
    h = RegionHierarchy.from_pairs([("q", "P")])
    cal = FrequencyCalendar.for_periods("2020-09", "2020-10")
    feats = {("q", tau - timedelta(days=k)): float(k + 1) for k in range(n_days)}
    return MixedFrequencyPanel(h, cal, feats, {})


def test_feature_window_full_history_is_exact_slice():
    tau = date(2020, 10, 31)
    panel = _panel_with_history(40, tau)
    w = build_feature_window(panel, "q", tau)
    assert w.visit_lags.shape == (31,)
    # most recent last: lag k days back holds k + 1
    np.testing.assert_array_equal(w.visit_lags, np.arange(31, 0, -1, dtype=float))
    assert not w.padding_mask.any()
    assert w.origin == ("q", tau)


def test_feature_window_pads_short_history():
    tau = date(2020, 10, 10)
    panel = _panel_with_history(5, tau)
    w = build_feature_window(panel, "q", tau)
    assert (w.visit_lags[:26] == 0).all() and w.padding_mask[:26].all()
    assert not w.padding_mask[26:].any()
    np.testing.assert_array_equal(w.visit_lags[26:], [5, 4, 3, 2, 1])


def test_feature_window_onehots_for_oct_31():
    tau = date(2020, 10, 31)
    w = build_feature_window(_panel_with_history(3, tau), "q", tau)
    assert w.month_onehot.argmax() == 9 and w.month_onehot.sum() == 1
    assert w.day_onehot.shape == (31,) and w.day_onehot.argmax() == 30
    for block in (w.year_onehot, w.month_onehot, w.day_onehot, w.large_area_onehot, w.small_area_onehot):
        assert block.sum() == 1.0


def test_feature_window_lag_days_validation():
    tau = date(2020, 10, 31)
    panel = _panel_with_history(3, tau)
    with pytest.raises(ValueError):
        build_feature_window(panel, "q", tau, lag_days=0)
    assert build_feature_window(panel, "q", tau, lag_days=7).visit_lags.shape == (7,)


def test_vocabulary_rejects_unseen_categories():
    voc = Vocabulary((2020,), ("P",), ("q",))
    with pytest.raises(ValueError, match="year"):
        voc.encode("q", "P", date(2021, 1, 1))
    with pytest.raises(KeyError):
        voc.encode("other", "P", date(2020, 1, 1))
    week = Vocabulary((2020,), ("P",), ("q",), day_kind="week")
    assert week.encode("q", "P", date(2020, 10, 31))["day"].shape == (7,)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_feature_window_independent_of_insertion_order(seed):
    panel = make_panel({"A": ["a1", "a2"]}, ["2020-01", "2020-02"], seed=seed % 1000)
    rng = np.random.default_rng(seed)
    items = list(panel.features.items())
    shuffled = dict(items[i] for i in rng.permutation(len(items)))
    other = MixedFrequencyPanel(panel.hierarchy, panel.calendar, shuffled, panel.labels)
    tau = date(2020, 2, 20)
    w1 = build_feature_window(panel, "a2", tau)
    w2 = build_feature_window(other, "a2", tau)
    np.testing.assert_array_equal(w1.visit_lags, w2.visit_lags)
    np.testing.assert_array_equal(w1.dummies, w2.dummies)


def test_validate_panel(two_city_panel):
    assert validate_panel(two_city_panel) == []
    bad_label = two_city_panel.with_labels({**two_city_panel.labels, ("PrefZ", "2020-01"): 3.0})
    v = validate_panel(bad_label)
    assert len(v) == 1 and "PrefZ" in v[0].entity
    feats = {**two_city_panel.features, ("City1", date(2021, 5, 5)): 1.0}
    v = validate_panel(MixedFrequencyPanel(two_city_panel.hierarchy, two_city_panel.calendar, feats, two_city_panel.labels))
    assert len(v) == 1 and "calendar" in v[0].rule


def test_labels_may_be_absent_while_features_exist(two_city_panel):
    trimmed = two_city_panel.with_labels({k: v for k, v in two_city_panel.labels.items() if k[1] == "2020-01"})
    assert validate_panel(trimmed) == []
    assert trimmed.labeled_pairs() == [("PrefA", "2020-01")]


def test_totality_of_parent_map():
    panel = make_panel({"A": ["a1", "a2"], "B": ["b1"]}, ["2020-01"])
    h = panel.hierarchy
    assert all(h.parent_of[q] in h.large_areas for q in h.small_areas)
