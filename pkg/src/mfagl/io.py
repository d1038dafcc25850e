"""CSV interfaces and the model checkpoint format.

All CSV files are UTF-8, comma separated, one header row.  Floats are written
with ``repr`` so every value survives a write/read cycle exactly.
"""

from __future__ import annotations

import csv
import json
import math
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .aggl import GranularPrediction, MfAglRegressor
from .geofeatures import DEFAULT_RADII_M, GeoFeatureRow, GpsTrajectory, Poi, _utc
from .netcore import Network
from .regions import (
    FrequencyCalendar,
    MixedFrequencyPanel,
    RegionHierarchy,
    Vocabulary,
    period_of_date,
)

__all__ = [
    "CsvFormatError",
    "read_hierarchy",
    "write_hierarchy",
    "read_labels",
    "write_labels",
    "read_features",
    "write_features",
    "read_truth",
    "write_truth",
    "read_panel",
    "write_panel",
    "read_predictions",
    "write_predictions",
    "read_trajectories",
    "write_trajectories",
    "read_pois",
    "write_pois",
    "read_geofeatures",
    "write_geofeatures",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_FORMAT = "mfagl-checkpoint"
CHECKPOINT_VERSION = 1


class CsvFormatError(ValueError):
    pass


def _rows(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise CsvFormatError(f"{path}: missing columns {missing} (header {header})")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def _write(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _float(path, lineno, value):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise CsvFormatError(f"{path}:{lineno}: not a number: {value!r}") from None
    if not math.isfinite(v):
        raise CsvFormatError(f"{path}:{lineno}: value must be finite, got {value!r}")
    return v


def _date(path, lineno, value):
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError):
        raise CsvFormatError(f"{path}:{lineno}: expected YYYY-MM-DD, got {value!r}") from None


def _period(path, lineno, value):
    try:
        y, m = value.split("-")
        if len(y) != 4 or len(m) != 2 or not 1 <= int(m) <= 12:
            raise ValueError
    except (AttributeError, ValueError):
        raise CsvFormatError(f"{path}:{lineno}: expected YYYY-MM, got {value!r}") from None
    return value


# -- panel files -------------------------------------------------------------------


def read_hierarchy(path) -> RegionHierarchy:
    pairs, weights = [], {}
    for lineno, row in _rows(path, ["small_area_id", "large_area_id"]):
        q, p = row["small_area_id"], row["large_area_id"]
        pairs.append((q, p))
        w = (row.get("weight") or "").strip()
        weights[q] = _float(path, lineno, w) if w else 1.0
    return RegionHierarchy.from_pairs(pairs, weights)


def write_hierarchy(path, hierarchy: RegionHierarchy) -> None:
    rows = [(q, hierarchy.parent_of[q], repr(hierarchy.weight_of[q])) for q in hierarchy.small_areas]
    _write(path, ["small_area_id", "large_area_id", "weight"], rows)


def read_labels(path) -> dict[tuple[str, str], float]:
    out = {}
    for lineno, row in _rows(path, ["period", "large_area_id", "value"]):
        key = (row["large_area_id"], _period(path, lineno, row["period"]))
        if key in out:
            raise CsvFormatError(f"{path}:{lineno}: duplicate label {key}")
        out[key] = _float(path, lineno, row["value"])
    return out


def write_labels(path, labels: Mapping[tuple[str, str], float]) -> None:
    rows = [(t, p, repr(float(v))) for (p, t), v in sorted(labels.items(), key=lambda kv: (kv[0][1], kv[0][0]))]
    _write(path, ["period", "large_area_id", "value"], rows)


def read_features(path) -> dict[tuple[str, date], float]:
    out = {}
    for lineno, row in _rows(path, ["date", "small_area_id", "visit_count"]):
        key = (row["small_area_id"], _date(path, lineno, row["date"]))
        v = _float(path, lineno, row["visit_count"])
        if v < 0:
            raise CsvFormatError(f"{path}:{lineno}: visit_count must be non-negative")
        if key in out:
            raise CsvFormatError(f"{path}:{lineno}: duplicate feature {key}")
        out[key] = v
    return out


def write_features(path, features: Mapping[tuple[str, date], float]) -> None:
    rows = [
        (tau.isoformat(), q, repr(float(v)))
        for (q, tau), v in sorted(features.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    ]
    _write(path, ["date", "small_area_id", "visit_count"], rows)


def read_truth(path) -> dict[tuple[str, str], float]:
    out = {}
    for lineno, row in _rows(path, ["period", "small_area_id", "value"]):
        out[(row["small_area_id"], _period(path, lineno, row["period"]))] = _float(path, lineno, row["value"])
    return out


def write_truth(path, truth: Mapping[tuple[str, str], float]) -> None:
    rows = [(t, q, repr(float(v))) for (q, t), v in sorted(truth.items(), key=lambda kv: (kv[0][1], kv[0][0]))]
    _write(path, ["period", "small_area_id", "value"], rows)


def read_panel(directory, calendar: FrequencyCalendar | None = None) -> MixedFrequencyPanel:
    """Load ``hierarchy.csv``, ``labels.csv`` and ``features.csv`` from a directory.

    Without an explicit calendar, one spanning whole months from the earliest
    to the latest feature date or label period is used.
    """
    directory = Path(directory)
    hierarchy = read_hierarchy(directory / "hierarchy.csv")
    labels = read_labels(directory / "labels.csv") if (directory / "labels.csv").exists() else {}
    features = read_features(directory / "features.csv")
    if calendar is None:
        periods = {t for _, t in labels} | {period_of_date(tau) for _, tau in features}
        if not periods:
            raise CsvFormatError(f"{directory}: no features or labels to derive a calendar from")
        calendar = FrequencyCalendar.for_periods(min(periods), max(periods))
    return MixedFrequencyPanel(hierarchy, calendar, features, labels)


def write_panel(directory, panel: MixedFrequencyPanel) -> None:
    directory = Path(directory)
    write_hierarchy(directory / "hierarchy.csv", panel.hierarchy)
    write_labels(directory / "labels.csv", panel.labels)
    write_features(directory / "features.csv", panel.features)


# -- predictions --------------------------------------------------------------------


def write_predictions(path, predictions: Iterable[GranularPrediction]) -> None:
    rows = [(g.as_of.isoformat(), g.small_area, g.period, repr(float(g.value))) for g in predictions]
    _write(path, ["as_of_date", "small_area_id", "period", "predicted_value"], rows)


def read_predictions(path) -> list[GranularPrediction]:
    out = []
    for lineno, row in _rows(path, ["as_of_date", "small_area_id", "period", "predicted_value"]):
        out.append(
            GranularPrediction(
                row["small_area_id"],
                _date(path, lineno, row["as_of_date"]),
                _period(path, lineno, row["period"]),
                _float(path, lineno, row["predicted_value"]),
            )
        )
    return out


# -- GPS inputs and geo-features -------------------------------------------------------


def read_trajectories(path) -> list[GpsTrajectory]:
    """One trajectory per user, records sorted by time; exact duplicate rows are merged."""
    by_user: dict[str, dict[datetime, tuple[float, float]]] = {}
    for lineno, row in _rows(path, ["user_id", "timestamp", "lat", "lon"]):
        try:
            ts = datetime.fromisoformat(row["timestamp"].replace("Z", "+00:00"))
        except ValueError:
            raise CsvFormatError(f"{path}:{lineno}: bad ISO-8601 timestamp {row['timestamp']!r}") from None
        ts = _utc(ts)
        loc = (_float(path, lineno, row["lat"]), _float(path, lineno, row["lon"]))
        seen = by_user.setdefault(row["user_id"], {})
        if ts in seen and seen[ts] != loc:
            raise CsvFormatError(f"{path}:{lineno}: user {row['user_id']!r} has two locations at {ts.isoformat()}")
        seen[ts] = loc
    return [
        GpsTrajectory(user, tuple((ts, lat, lon) for ts, (lat, lon) in sorted(pts.items())))
        for user, pts in sorted(by_user.items())
    ]


def write_trajectories(path, trajectories: Iterable[GpsTrajectory]) -> None:
    rows = []
    for traj in trajectories:
        for ts, lat, lon in traj.points:
            rows.append((traj.user, ts.isoformat().replace("+00:00", "Z"), repr(lat), repr(lon)))
    _write(path, ["user_id", "timestamp", "lat", "lon"], rows)


def read_pois(path) -> list[Poi]:
    return [
        Poi(row["office_id"], _float(path, n, row["lat"]), _float(path, n, row["lon"]), _float(path, n, row["radius_m"]))
        for n, row in _rows(path, ["office_id", "lat", "lon", "radius_m"])
    ]


def write_pois(path, pois: Iterable[Poi]) -> None:
    _write(path, ["office_id", "lat", "lon", "radius_m"], [(p.office_id, repr(p.lat), repr(p.lon), repr(p.radius_m)) for p in pois])


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_geofeatures(path, rows, radii_m=DEFAULT_RADII_M) -> None:
    """``rows`` are ``(user, day, office_id, GeoFeatureRow)`` tuples."""
    cols = GeoFeatureRow.column_names(radii_m)
    out = [(user, day.isoformat(), office, *(_num(x) for x in row.to_vector())) for user, day, office, row in rows]
    _write(path, ["user_id", "date", "office_id", *cols], out)


def read_geofeatures(path, radii_m=DEFAULT_RADII_M):
    cols = GeoFeatureRow.column_names(radii_m)
    out = []
    for lineno, row in _rows(path, ["user_id", "date", "office_id", *cols]):
        values = {c: _float(path, lineno, row[c]) for c in cols}
        out.append((row["user_id"], _date(path, lineno, row["date"]), row["office_id"], GeoFeatureRow.from_dict(values, radii_m)))
    return out


# -- checkpoint -------------------------------------------------------------------------


def save_checkpoint(path, model: MfAglRegressor) -> None:
    """Write a fitted model as versioned JSON; floats round-trip bit-exactly."""
    net = model.network_
    h = model.hierarchy_
    voc = model.vocabulary_
    params = model.get_params()
    params["mlp_hidden"] = list(params["mlp_hidden"])
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "estimator": params,
        "network": net.config(),
        "theta": net.theta.tolist(),
        "input_scale": model.input_scale_,
        "output_scale": model.output_scale_,
        "vocabulary": {
            "years": list(voc.years),
            "large_areas": list(voc.large_areas),
            "small_areas": list(voc.small_areas),
            "day_kind": voc.day_kind,
        },
        "hierarchy": [[q, h.parent_of[q], h.weight_of[q]] for q in h.small_areas],
        "loss_history": list(model.loss_history_),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_checkpoint(path) -> MfAglRegressor:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an mfagl checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = dict(doc["estimator"])
    params["mlp_hidden"] = tuple(params["mlp_hidden"])
    model = MfAglRegressor(**params)
    cfg = dict(doc["network"])
    cfg["mlp_hidden"] = tuple(cfg["mlp_hidden"])
    net = Network(seed=None, **cfg)
    theta = np.array(doc["theta"], dtype=np.float64)
    if theta.shape != net.theta.shape:
        raise ValueError(f"{path}: parameter vector has {theta.size} values, network needs {net.theta.size}")
    net.theta[...] = theta
    model.network_ = net
    model.input_scale_ = float(doc["input_scale"])
    model.output_scale_ = float(doc["output_scale"])
    v = doc["vocabulary"]
    model.vocabulary_ = Vocabulary(tuple(v["years"]), tuple(v["large_areas"]), tuple(v["small_areas"]), v["day_kind"])
    model.hierarchy_ = RegionHierarchy.from_pairs([(q, p) for q, p, _ in doc["hierarchy"]], {q: w for q, _, w in doc["hierarchy"]})
    model.loss_history_ = list(doc["loss_history"])
    return model
