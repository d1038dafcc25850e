"""Geo-features around points of interest and daily office visit counts.

Raw GPS trajectories are summarised per (user, day, office) into a fixed
length feature row: record counts over a ladder of radii, speeds, stay
points, and speed/cosine readings at the nine points closest to the office.
A pluggable classifier turns each row into a visit decision; visits are
counted at most once per user, office and day.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "EARTH_RADIUS_M",
    "DEFAULT_RADII_M",
    "GpsTrajectory",
    "Poi",
    "StayPoint",
    "GeoFeatureRow",
    "ThresholdVisitClassifier",
    "LogisticVisitClassifier",
    "haversine",
    "count_within_radius",
    "detect_stay_points",
    "speed_profile",
    "nearest9_features",
    "extract_features",
    "classify_visit",
    "assign_office",
    "daily_feature_rows",
    "daily_visit_counts",
]

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_RADII_M = (500, 400, 300, 200, 150, 100, 90, 80, 70, 60, 50, 40, 30, 20, 10, 5, 3)
SENTINEL = -1.0
N_NEAREST = 9


def haversine(a, b) -> float:
    """Great-circle distance in meters between ``(lat, lon)`` pairs in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _haversine_np(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def _utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class GpsTrajectory:
    """One user's time-ordered ``(timestamp, lat, lon)`` records."""

    user: str
    points: tuple = ()

    def __post_init__(self):
        pts = tuple((_utc(ts), float(lat), float(lon)) for ts, lat, lon in self.points)
        for k, (ts, lat, lon) in enumerate(pts):
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                raise ValueError(f"point {k} of user {self.user!r} has invalid coordinates ({lat}, {lon})")
            if k and ts <= pts[k - 1][0]:
                raise ValueError(f"timestamps of user {self.user!r} are not strictly increasing at point {k}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def lats(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=float)

    @property
    def lons(self) -> np.ndarray:
        return np.array([p[2] for p in self.points], dtype=float)

    @property
    def seconds(self) -> np.ndarray:
        return np.array([p[0].timestamp() for p in self.points], dtype=float)

    def split_by_day(self) -> dict[date, "GpsTrajectory"]:
        days = defaultdict(list)
        for p in self.points:
            days[p[0].date()].append(p)
        return {d: GpsTrajectory(self.user, tuple(pts)) for d, pts in sorted(days.items())}


@dataclass(frozen=True)
class Poi:
    office_id: str
    lat: float
    lon: float
    radius_m: float

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ValueError(f"POI {self.office_id!r} needs a positive radius, got {self.radius_m}")

    @property
    def location(self):
        return (self.lat, self.lon)


@dataclass(frozen=True)
class StayPoint:
    lat: float
    lon: float
    start: datetime
    end: datetime
    count: int


@dataclass(frozen=True)
class GeoFeatureRow:
    """Fixed-length summary of one trajectory against one POI; ``-1`` marks missing slots."""

    records_inside: tuple[int, ...]
    records_outside_500m: int
    poi_radius: float
    records_inside_building: int
    mean_speed: float
    max_speed: float
    stay_count: int
    speed_at_9: tuple[float, ...]
    cosine_at_9: tuple[float, ...]
    radii_m: tuple[float, ...] = field(default=DEFAULT_RADII_M)

    @staticmethod
    def column_names(radii_m: Sequence[float] = DEFAULT_RADII_M) -> list[str]:
        cols = [f"records_inside_{_fmt_radius(r)}m" for r in radii_m]
        cols += [
            "records_outside_500m",
            "poi_radius",
            "records_inside_building",
            "mean_speed",
            "max_speed",
            "stay_count",
        ]
        cols += [f"speed_at_{k}" for k in range(N_NEAREST)]
        cols += [f"cosine_at_{k}" for k in range(N_NEAREST)]
        return cols

    def to_vector(self) -> np.ndarray:
        return np.array(
            [
                *self.records_inside,
                self.records_outside_500m,
                self.poi_radius,
                self.records_inside_building,
                self.mean_speed,
                self.max_speed,
                self.stay_count,
                *self.speed_at_9,
                *self.cosine_at_9,
            ],
            dtype=float,
        )

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.column_names(self.radii_m), self.to_vector().tolist()))

    @classmethod
    def from_dict(cls, values, radii_m: Sequence[float] = DEFAULT_RADII_M) -> "GeoFeatureRow":
        radii_m = tuple(radii_m)
        v = lambda k: float(values[k])
        return cls(
            records_inside=tuple(int(v(f"records_inside_{_fmt_radius(r)}m")) for r in radii_m),
            records_outside_500m=int(v("records_outside_500m")),
            poi_radius=v("poi_radius"),
            records_inside_building=int(v("records_inside_building")),
            mean_speed=v("mean_speed"),
            max_speed=v("max_speed"),
            stay_count=int(v("stay_count")),
            speed_at_9=tuple(v(f"speed_at_{k}") for k in range(N_NEAREST)),
            cosine_at_9=tuple(v(f"cosine_at_{k}") for k in range(N_NEAREST)),
            radii_m=radii_m,
        )


def _fmt_radius(r) -> str:
    return f"{r:g}"


def count_within_radius(trajectory: GpsTrajectory, poi: Poi, radius: float) -> int:
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not len(trajectory):
        return 0
    d = _haversine_np(trajectory.lats, trajectory.lons, poi.lat, poi.lon)
    return int(np.count_nonzero(d <= radius))


def detect_stay_points(
    trajectory: GpsTrajectory, dist_threshold: float = 200.0, time_threshold: float = 300.0
) -> list[StayPoint]:
    """Anchor-based stay points: runs within ``dist_threshold`` m of their first point lasting ``time_threshold`` s."""
    if not (dist_threshold > 0 and time_threshold > 0):
        raise ValueError("thresholds must be positive")
    pts = trajectory.points
    n = len(pts)
    out = []
    i = 0
    while i < n:
        j = i + 1
        while j < n and haversine(pts[i][1:], pts[j][1:]) <= dist_threshold:
            j += 1
        if (pts[j - 1][0] - pts[i][0]).total_seconds() >= time_threshold:
            run = pts[i:j]
            out.append(
                StayPoint(
                    lat=float(np.mean([p[1] for p in run])),
                    lon=float(np.mean([p[2] for p in run])),
                    start=run[0][0],
                    end=run[-1][0],
                    count=len(run),
                )
            )
            i = j
        else:
            i += 1
    return out


def _segment_speeds_kmh(trajectory: GpsTrajectory) -> np.ndarray:
    lats, lons, secs = trajectory.lats, trajectory.lons, trajectory.seconds
    dist = _haversine_np(lats[:-1], lons[:-1], lats[1:], lons[1:])
    return dist / np.diff(secs) * 3.6


def speed_profile(trajectory: GpsTrajectory) -> tuple[float, float]:
    """Mean and max segment speed in km/h."""
    if len(trajectory) < 2:
        raise ValueError("speed profile needs at least two points")
    speeds = _segment_speeds_kmh(trajectory)
    return float(speeds.mean()), float(speeds.max())


def _planar(origin_lat, origin_lon, lat, lon):
    """East/north offset in meters of ``(lat, lon)`` from the origin (equirectangular)."""
    k = math.pi / 180 * EARTH_RADIUS_M
    return (lon - origin_lon) * k * math.cos(math.radians(origin_lat)), (lat - origin_lat) * k


def nearest9_features(trajectory: GpsTrajectory, poi: Poi) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Speed into, and turning cosine at, the nine points nearest the POI (nearest first).

    The cosine is taken at the point between the vector back to the last
    earlier record at a different location and the vector to the POI.
    """
    speeds = [SENTINEL] * N_NEAREST
    cosines = [SENTINEL] * N_NEAREST
    n = len(trajectory)
    if n == 0:
        return tuple(speeds), tuple(cosines)
    pts = trajectory.points
    d = _haversine_np(trajectory.lats, trajectory.lons, poi.lat, poi.lon)
    seg = _segment_speeds_kmh(trajectory) if n > 1 else np.array([])
    for slot, idx in enumerate(np.argsort(d, kind="stable")[:N_NEAREST]):
        if idx == 0:
            continue
        speeds[slot] = float(seg[idx - 1])
        _, lat, lon = pts[idx]
        prev = idx - 1
        while prev >= 0 and (pts[prev][1], pts[prev][2]) == (lat, lon):
            prev -= 1
        if prev < 0:
            continue
        bx, by = _planar(lat, lon, pts[prev][1], pts[prev][2])
        px, py = _planar(lat, lon, poi.lat, poi.lon)
        norm = math.hypot(bx, by) * math.hypot(px, py)
        if norm > 0:
            cosines[slot] = max(-1.0, min(1.0, (bx * px + by * py) / norm))
    return tuple(speeds), tuple(cosines)


def extract_features(
    trajectory: GpsTrajectory,
    poi: Poi,
    radii_m: Sequence[float] = DEFAULT_RADII_M,
    stay_dist_m: float = 200.0,
    stay_time_s: float = 300.0,
) -> GeoFeatureRow:
    radii_m = tuple(radii_m)
    if len(trajectory):
        d = _haversine_np(trajectory.lats, trajectory.lons, poi.lat, poi.lon)
    else:
        d = np.array([])
    if len(trajectory) >= 2:
        mean_speed, max_speed = speed_profile(trajectory)
    else:
        mean_speed = max_speed = SENTINEL
    speed9, cos9 = nearest9_features(trajectory, poi)
    return GeoFeatureRow(
        records_inside=tuple(int(np.count_nonzero(d <= r)) for r in radii_m),
        records_outside_500m=int(np.count_nonzero(d > 500.0)),
        poi_radius=float(poi.radius_m),
        records_inside_building=int(np.count_nonzero(d <= poi.radius_m)),
        mean_speed=mean_speed,
        max_speed=max_speed,
        stay_count=len(detect_stay_points(trajectory, stay_dist_m, stay_time_s)),
        speed_at_9=speed9,
        cosine_at_9=cos9,
        radii_m=radii_m,
    )


@dataclass(frozen=True)
class ThresholdVisitClassifier:
    """Visit when at least ``k`` records fall inside the building and a stay point exists."""

    k: int = 3
    min_stays: int = 1

    def decide(self, row: GeoFeatureRow) -> bool:
        return row.records_inside_building >= self.k and row.stay_count >= self.min_stays


@dataclass(frozen=True)
class LogisticVisitClassifier:
    """Logistic model over :meth:`GeoFeatureRow.to_vector`; a visit needs probability strictly above ``cut``."""

    weights: tuple[float, ...]
    bias: float = 0.0
    cut: float = 0.5

    @classmethod
    def zeros(cls, radii_m: Sequence[float] = DEFAULT_RADII_M, cut: float = 0.5):
        return cls(tuple([0.0] * len(GeoFeatureRow.column_names(radii_m))), 0.0, cut)

    @classmethod
    def fit(cls, rows: Sequence[GeoFeatureRow], visited: Sequence[bool], cut: float = 0.5, **params):
        """Fit with scikit-learn's logistic regression on labeled rows."""
        from sklearn.linear_model import LogisticRegression

        X = np.array([r.to_vector() for r in rows])
        clf = LogisticRegression(**params).fit(X, np.asarray(visited, dtype=int))
        return cls(tuple(clf.coef_[0].tolist()), float(clf.intercept_[0]), cut)

    def probability(self, row: GeoFeatureRow) -> float:
        x = row.to_vector()
        if x.shape[0] != len(self.weights):
            raise ValueError(f"classifier expects {len(self.weights)} features, row has {x.shape[0]}")
        z = float(np.dot(self.weights, x)) + self.bias
        return 0.5 * (1.0 + math.tanh(0.5 * z))

    def decide(self, row: GeoFeatureRow) -> bool:
        return self.probability(row) > self.cut


def classify_visit(row: GeoFeatureRow, classifier) -> bool:
    return bool(classifier.decide(row))


def assign_office(point, offices: Sequence[Poi]) -> str:
    """Nearest office to ``(lat, lon)``; exact ties go to the smallest office id."""
    if not offices:
        raise ValueError("no offices to assign to")
    best = min(offices, key=lambda o: (haversine(point, o.location), o.office_id))
    return best.office_id


def daily_feature_rows(
    trajectories: Iterable[GpsTrajectory],
    offices: Sequence[Poi],
    radii_m: Sequence[float] = DEFAULT_RADII_M,
    stay_dist_m: float = 200.0,
    stay_time_s: float = 300.0,
) -> list[tuple[str, date, str, GeoFeatureRow]]:
    """``(user, day, office_id, row)`` for every office that is nearest to some record of that user-day."""
    by_id = {o.office_id: o for o in offices}
    out = []
    for traj in trajectories:
        for day, part in traj.split_by_day().items():
            nearest = sorted({assign_office(p[1:], offices) for p in part.points})
            for office_id in nearest:
                row = extract_features(part, by_id[office_id], radii_m, stay_dist_m, stay_time_s)
                out.append((traj.user, day, office_id, row))
    out.sort(key=lambda r: (r[0], r[1], r[2]))
    return out


def daily_visit_counts(
    trajectories: Iterable[GpsTrajectory],
    offices: Sequence[Poi],
    classifier=None,
    **feature_params,
) -> dict[tuple[str, date], int]:
    """Number of distinct visiting users per ``(office_id, day)``."""
    classifier = classifier or ThresholdVisitClassifier()
    visitors = defaultdict(set)
    for user, day, office_id, row in daily_feature_rows(trajectories, offices, **feature_params):
        if classify_visit(row, classifier):
            visitors[(office_id, day)].add(user)
    return {k: len(v) for k, v in sorted(visitors.items())}
