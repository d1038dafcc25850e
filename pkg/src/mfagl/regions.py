"""Spatial hierarchy, mixed-frequency calendar and the panel dataset.

Small areas ``q`` roll up into large areas ``p`` and daily ticks roll up into
monthly periods.  Periods are ``"YYYY-MM"`` strings throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "RegionHierarchy",
    "FrequencyCalendar",
    "MixedFrequencyPanel",
    "FeatureWindow",
    "Vocabulary",
    "Violation",
    "map_region",
    "map_time",
    "build_feature_window",
    "validate_panel",
    "period_of_date",
    "period_range",
    "shift_period",
]


def period_of_date(d: date) -> str:
    return f"{d.year:04d}-{d.month:02d}"


def _parse_period(t: str) -> tuple[int, int]:
    year, month = t.split("-")
    return int(year), int(month)


def shift_period(t: str, months: int) -> str:
    year, month = _parse_period(t)
    k = year * 12 + (month - 1) + months
    return f"{k // 12:04d}-{k % 12 + 1:02d}"


def period_range(first: str, last: str) -> list[str]:
    out = [first]
    while out[-1] < last:
        out.append(shift_period(out[-1], 1))
    return out


def period_bounds(t: str) -> tuple[date, date]:
    """First and last calendar day of a monthly period."""
    year, month = _parse_period(t)
    start = date(year, month, 1)
    nxt = date(year + month // 12, month % 12 + 1, 1)
    return start, nxt - timedelta(days=1)


@dataclass(frozen=True)
class RegionHierarchy:
    """Small areas, large areas, the parent map and aggregation weights."""

    small_areas: tuple[str, ...]
    large_areas: tuple[str, ...]
    parent_of: Mapping[str, str]
    weight_of: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        small = tuple(self.small_areas)
        large = tuple(self.large_areas)
        if len(set(small)) != len(small) or len(set(large)) != len(large):
            raise ValueError("duplicate area identifiers in hierarchy")
        parent = dict(self.parent_of)
        weights = {q: float(self.weight_of.get(q, 1.0)) for q in small}
        missing = [q for q in small if q not in parent]
        if missing:
            raise ValueError(f"small areas without a parent: {missing}")
        stray = [q for q in parent if q not in set(small)]
        if stray:
            raise ValueError(f"parent map names unknown small areas: {stray}")
        large_set = set(large)
        for q, p in parent.items():
            if p not in large_set:
                raise ValueError(f"small area {q!r} maps to unknown large area {p!r}")
        childless = sorted(large_set - set(parent.values()))
        if childless:
            raise ValueError(f"large areas without children: {childless}")
        for q, w in weights.items():
            if not (0.0 <= w <= 1.0):
                raise ValueError(f"weight of {q!r} outside [0, 1]: {w}")
        object.__setattr__(self, "small_areas", small)
        object.__setattr__(self, "large_areas", large)
        object.__setattr__(self, "parent_of", MappingProxyType(parent))
        object.__setattr__(self, "weight_of", MappingProxyType(weights))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]], weights: Mapping[str, float] | None = None):
        """Build from ``(small_area, large_area)`` pairs, keeping first-seen order."""
        pairs = list(pairs)
        small = tuple(dict.fromkeys(q for q, _ in pairs))
        large = tuple(dict.fromkeys(p for _, p in pairs))
        return cls(small, large, dict(pairs), dict(weights or {}))

    def __reduce__(self):
        return (type(self), (self.small_areas, self.large_areas, dict(self.parent_of), dict(self.weight_of)))

    def children(self, p: str) -> tuple[str, ...]:
        if p not in self.large_areas:
            raise KeyError(f"unknown large area: {p!r}")
        return tuple(q for q in self.small_areas if self.parent_of[q] == p)

    def __eq__(self, other):
        if not isinstance(other, RegionHierarchy):
            return NotImplemented
        return (
            set(self.small_areas) == set(other.small_areas)
            and set(self.large_areas) == set(other.large_areas)
            and dict(self.parent_of) == dict(other.parent_of)
            and dict(self.weight_of) == dict(other.weight_of)
        )

    __hash__ = None


@dataclass(frozen=True)
class FrequencyCalendar:
    """Ordered fine ticks (days) and the coarse periods (months) they belong to."""

    fine_ticks: tuple[date, ...]
    coarse_periods: tuple[str, ...]
    period_of: Mapping[date, str]

    def __post_init__(self):
        ticks = tuple(sorted(self.fine_ticks))
        periods = tuple(self.coarse_periods)
        mapping = dict(self.period_of)
        if len(set(ticks)) != len(ticks):
            raise ValueError("duplicate fine ticks")
        rank = {t: i for i, t in enumerate(periods)}
        if len(rank) != len(periods):
            raise ValueError("duplicate coarse periods")
        last = -1
        for tau in ticks:
            if tau not in mapping:
                raise ValueError(f"tick {tau} has no period")
            r = rank.get(mapping[tau])
            if r is None:
                raise ValueError(f"tick {tau} maps to unknown period {mapping[tau]!r}")
            if r < last:
                raise ValueError(f"period mapping is not monotone at {tau}")
            last = r
        empty = set(periods) - {mapping[tau] for tau in ticks}
        if empty:
            raise ValueError(f"periods without ticks: {sorted(empty)}")
        object.__setattr__(self, "fine_ticks", ticks)
        object.__setattr__(self, "coarse_periods", periods)
        object.__setattr__(self, "period_of", MappingProxyType({tau: mapping[tau] for tau in ticks}))

    @classmethod
    def monthly(cls, first: date, last: date) -> "FrequencyCalendar":
        """Daily ticks from ``first`` to ``last`` inclusive, grouped by calendar month."""
        if last < first:
            raise ValueError("calendar end precedes start")
        n = (last - first).days + 1
        ticks = [first + timedelta(days=i) for i in range(n)]
        mapping = {tau: period_of_date(tau) for tau in ticks}
        periods = tuple(dict.fromkeys(mapping[tau] for tau in ticks))
        return cls(tuple(ticks), periods, mapping)

    @classmethod
    def for_periods(cls, first: str, last: str) -> "FrequencyCalendar":
        return cls.monthly(period_bounds(first)[0], period_bounds(last)[1])

    def __reduce__(self):
        return (type(self), (self.fine_ticks, self.coarse_periods, dict(self.period_of)))

    def ticks_in(self, t: str) -> tuple[date, ...]:
        return tuple(tau for tau in self.fine_ticks if self.period_of[tau] == t)

    def __contains__(self, tau) -> bool:
        return tau in self.period_of


def map_region(hierarchy: RegionHierarchy, q: str) -> str:
    try:
        return hierarchy.parent_of[q]
    except KeyError:
        raise KeyError(f"unknown small area: {q!r}") from None


def map_time(calendar: FrequencyCalendar, tau: date) -> str:
    try:
        return calendar.period_of[tau]
    except KeyError:
        raise KeyError(f"date outside calendar: {tau}") from None


@dataclass(frozen=True)
class MixedFrequencyPanel:
    """Daily per-small-area features with monthly per-large-area labels.

    ``features`` maps ``(small_area, date)`` to a visit count and ``labels``
    maps ``(large_area, period)`` to the reported value.  Trailing periods may
    be unlabeled while their features exist.
    """

    hierarchy: RegionHierarchy
    calendar: FrequencyCalendar
    features: Mapping[tuple[str, date], float]
    labels: Mapping[tuple[str, str], float]

    def labeled_pairs(self) -> list[tuple[str, str]]:
        """Labeled ``(p, t)`` pairs in hierarchy/calendar order."""
        prank = {p: i for i, p in enumerate(self.hierarchy.large_areas)}
        trank = {t: i for i, t in enumerate(self.calendar.coarse_periods)}
        keys = [k for k in self.labels if k[0] in prank and k[1] in trank]
        return sorted(keys, key=lambda k: (trank[k[1]], prank[k[0]]))

    def with_labels(self, labels: Mapping[tuple[str, str], float]) -> "MixedFrequencyPanel":
        return MixedFrequencyPanel(self.hierarchy, self.calendar, self.features, labels)

    def dense_features(self, first: date, last: date) -> np.ndarray:
        """Array ``(n_small, n_days)`` of features on ``[first, last]``; missing → 0."""
        n = (last - first).days + 1
        index = {q: i for i, q in enumerate(self.hierarchy.small_areas)}
        out = np.zeros((len(index), max(n, 0)))
        for (q, tau), v in self.features.items():
            k = (tau - first).days
            if q in index and 0 <= k < n:
                out[index[q], k] = v
        return out

    def __eq__(self, other):
        if not isinstance(other, MixedFrequencyPanel):
            return NotImplemented
        return (
            self.hierarchy == other.hierarchy
            and self.calendar == other.calendar
            and dict(self.features) == dict(other.features)
            and dict(self.labels) == dict(other.labels)
        )

    __hash__ = None


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str

    def __str__(self):
        return f"{self.entity}: {self.rule}"


def validate_panel(panel: MixedFrequencyPanel) -> list[Violation]:
    """Return every broken panel invariant; an empty list means the panel is usable."""
    out = []
    h, cal = panel.hierarchy, panel.calendar
    large, small, periods = set(h.large_areas), set(h.small_areas), set(cal.coarse_periods)
    for (p, t), v in panel.labels.items():
        if p not in large:
            out.append(Violation(f"label ({p}, {t})", "references unknown large area"))
        if t not in periods:
            out.append(Violation(f"label ({p}, {t})", "references period outside calendar"))
        if not math.isfinite(v):
            out.append(Violation(f"label ({p}, {t})", "value is not finite"))
    for (q, tau), v in panel.features.items():
        if q not in small:
            out.append(Violation(f"feature ({q}, {tau})", "references unknown small area"))
        if tau not in cal:
            out.append(Violation(f"feature ({q}, {tau})", "dated outside calendar"))
        if not math.isfinite(v) or v < 0:
            out.append(Violation(f"feature ({q}, {tau})", "value must be finite and non-negative"))
    return out


@dataclass(frozen=True)
class Vocabulary:
    """Frozen category lists for the calendar and area one-hot blocks.

    ``day_kind`` selects day-of-month (31 slots) or day-of-week (7 slots).
    """

    years: tuple[int, ...]
    large_areas: tuple[str, ...]
    small_areas: tuple[str, ...]
    day_kind: str = "month"

    def __post_init__(self):
        if self.day_kind not in ("month", "week"):
            raise ValueError(f"day_kind must be 'month' or 'week', got {self.day_kind!r}")
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        object.__setattr__(self, "large_areas", tuple(self.large_areas))
        object.__setattr__(self, "small_areas", tuple(self.small_areas))

    @classmethod
    def from_panel(cls, panel: MixedFrequencyPanel, day_kind: str = "month") -> "Vocabulary":
        years = sorted({tau.year for tau in panel.calendar.fine_ticks})
        return cls(tuple(years), panel.hierarchy.large_areas, panel.hierarchy.small_areas, day_kind)

    @property
    def n_days(self) -> int:
        return 31 if self.day_kind == "month" else 7

    @property
    def width(self) -> int:
        return len(self.years) + 12 + self.n_days + len(self.large_areas) + len(self.small_areas)

    def day_index(self, tau: date) -> int:
        return tau.day - 1 if self.day_kind == "month" else tau.weekday()

    def encode(self, q: str, p: str, tau: date) -> dict[str, np.ndarray]:
        """One-hot blocks for ``tau`` and the area pair; unseen categories raise."""

        def onehot(n, i):
            v = np.zeros(n)
            v[i] = 1.0
            return v

        try:
            iy = self.years.index(tau.year)
        except ValueError:
            raise ValueError(f"year {tau.year} not in training vocabulary {self.years}") from None
        try:
            ip = self.large_areas.index(p)
            iq = self.small_areas.index(q)
        except ValueError:
            raise KeyError(f"area ({q!r}, {p!r}) not in training vocabulary") from None
        return {
            "year": onehot(len(self.years), iy),
            "month": onehot(12, tau.month - 1),
            "day": onehot(self.n_days, self.day_index(tau)),
            "large_area": onehot(len(self.large_areas), ip),
            "small_area": onehot(len(self.small_areas), iq),
        }


@dataclass(frozen=True, eq=False)
class FeatureWindow:
    """Model input at ``(q, τ)``: lagged visits, oldest first, plus dummies."""

    visit_lags: np.ndarray
    padding_mask: np.ndarray
    year_onehot: np.ndarray
    month_onehot: np.ndarray
    day_onehot: np.ndarray
    large_area_onehot: np.ndarray
    small_area_onehot: np.ndarray
    origin: tuple[str, date]

    @property
    def dummies(self) -> np.ndarray:
        return np.concatenate(
            [
                self.year_onehot,
                self.month_onehot,
                self.day_onehot,
                self.large_area_onehot,
                self.small_area_onehot,
            ]
        )


def build_feature_window(
    panel: MixedFrequencyPanel,
    q: str,
    tau: date,
    lag_days: int = 31,
    vocabulary: Vocabulary | None = None,
) -> FeatureWindow:
    if lag_days < 1:
        raise ValueError(f"lag_days must be >= 1, got {lag_days}")
    p = map_region(panel.hierarchy, q)
    vocabulary = vocabulary or Vocabulary.from_panel(panel)
    lags = np.zeros(lag_days)
    mask = np.ones(lag_days, dtype=bool)
    for i in range(lag_days):
        v = panel.features.get((q, tau - timedelta(days=lag_days - 1 - i)))
        if v is not None:
            lags[i] = v
            mask[i] = False
    blocks = vocabulary.encode(q, p, tau)
    return FeatureWindow(
        visit_lags=lags,
        padding_mask=mask,
        year_onehot=blocks["year"],
        month_onehot=blocks["month"],
        day_onehot=blocks["day"],
        large_area_onehot=blocks["large_area"],
        small_area_onehot=blocks["small_area"],
        origin=(q, tau),
    )
