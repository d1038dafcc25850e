from datetime import date, timedelta

import numpy as np
import pytest

from mfagl.regions import FrequencyCalendar, MixedFrequencyPanel, RegionHierarchy


def make_panel(children, months, days_per_month=None, seed=0, labels=True, weights=None):
    """Small random panel. ``children`` maps large area -> list of small areas.

    With ``days_per_month`` set, each month keeps only its first that many days.
    """
    rng = np.random.default_rng(seed)
    pairs = [(q, p) for p, qs in children.items() for q in qs]
    hierarchy = RegionHierarchy.from_pairs(pairs, weights)
    cal = FrequencyCalendar.for_periods(months[0], months[-1])
    if days_per_month is not None:
        ticks = [tau for tau in cal.fine_ticks if tau.day <= days_per_month]
        cal = FrequencyCalendar(tuple(ticks), cal.coarse_periods, {tau: cal.period_of[tau] for tau in ticks})
    features = {(q, tau): float(rng.uniform(0, 20)) for q, _ in pairs for tau in cal.fine_ticks}
    lab = {}
    if labels:
        lab = {(p, t): float(rng.uniform(10, 100)) for p in children for t in cal.coarse_periods}
    return MixedFrequencyPanel(hierarchy, cal, features, lab)


@pytest.fixture
def two_city_panel():
    return make_panel({"PrefA": ["City1", "City2"]}, ["2020-01", "2020-02"], seed=1)


def days(start: date, n: int):
    return [start + timedelta(days=i) for i in range(n)]
