"""Evaluation, the data-availability schedule, and choropleth export."""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Callable

import numpy as np

from .aggl import GranularPrediction, MfAglRegressor, aggregate
from .baselines import LabelForecaster
from .regions import MixedFrequencyPanel, period_bounds, period_of_date, shift_period

__all__ = [
    "mape",
    "format_pct",
    "ModelScore",
    "EvaluationReport",
    "ArPredictor",
    "RfPredictor",
    "MfAglPredictor",
    "default_models",
    "evaluate_models",
    "release_date",
    "AuditedLabels",
    "ScheduleResult",
    "schedule_run",
    "export_choropleth",
]


def mape(actual: Mapping[str, float], predicted: Mapping[str, float]) -> float:
    """Mean absolute percentage error in percent, ``100/|P| * sum |y - yhat| / |y|``."""
    if set(actual) != set(predicted):
        missing = sorted(set(actual) ^ set(predicted))
        raise KeyError(f"actual and predicted keys differ: {missing}")
    if not actual:
        raise ValueError("mape of an empty set is undefined")
    total = 0.0
    for k in sorted(actual):
        y = float(actual[k])
        if y == 0:
            raise ZeroDivisionError(f"actual value for {k!r} is zero")
        total += abs(y - float(predicted[k])) / abs(y)
    return 100.0 * total / len(actual)


def format_pct(value: float) -> str:
    return f"{value:.2f}%"


def _ape(actual, predicted):
    return {k: 100.0 * abs(float(actual[k]) - float(predicted[k])) / abs(float(actual[k])) for k in sorted(actual)}


# -- evaluation -------------------------------------------------------------------------


@dataclass
class ModelScore:
    model: str
    mape_pct: float
    se: float
    n: int
    ape: dict[str, float]
    predictions: dict[str, float]


@dataclass
class EvaluationReport:
    holdout: str
    scores: list[ModelScore]
    granular: list[GranularPrediction] = field(default_factory=list)

    def score(self, model: str) -> ModelScore:
        for s in self.scores:
            if s.model == model:
                return s
        raise KeyError(model)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "mape_pct", "se", "n"])
        for s in self.scores:
            w.writerow([s.model, repr(s.mape_pct), repr(s.se), s.n])
        text = buf.getvalue()
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text, encoding="utf-8")
        return text

    def table(self) -> str:
        lines = [f"holdout {self.holdout}", f"{'model':<8} {'MAPE':>8} {'SE':>8} {'N':>4}"]
        for s in self.scores:
            se = "n/a" if math.isnan(s.se) else f"{s.se:.2f}"
            lines.append(f"{s.model:<8} {format_pct(s.mape_pct):>8} {se:>8} {s.n:>4}")
        return "\n".join(lines)


class ArPredictor:
    """AR baseline: forecasts each large area from its labels before the target month."""

    name = "AR"

    def __init__(self, lag_order=11):
        self.lag_order = lag_order

    def __call__(self, train: MixedFrequencyPanel, panel: MixedFrequencyPanel, period: str) -> dict[str, float]:
        f = LabelForecaster(kind="ar", lag_order=self.lag_order).fit(train.labels)
        return {p: f.forecast(train.labels, p, period) for p in panel.hierarchy.large_areas}


class RfPredictor:
    name = "RF"

    def __init__(self, lag_order=11, rf_params=None):
        self.lag_order = lag_order
        self.rf_params = rf_params

    def __call__(self, train, panel, period):
        f = LabelForecaster(kind="rf", lag_order=self.lag_order, rf_params=self.rf_params).fit(train.labels)
        return {p: f.forecast(train.labels, p, period) for p in panel.hierarchy.large_areas}


class MfAglPredictor:
    """Trains MF-AGL, nowcasts every small area on the last day of the target
    month, then aggregates to large areas with the hierarchy weights."""

    name = "MF-AGL"

    def __init__(self, params=None, model: MfAglRegressor | None = None):
        self.params = dict(params or {})
        self.model = model
        self.model_ = None
        self.granular_: list[GranularPrediction] = []

    def __call__(self, train, panel, period):
        model = self.model if self.model is not None else MfAglRegressor(**self.params).fit(train)
        self.model_ = model
        tau = period_bounds(period)[1]
        self.granular_ = model.nowcast(panel, tau)
        values = {g.small_area: g.value for g in self.granular_}
        return {p: aggregate(values, panel.hierarchy, p) for p in panel.hierarchy.large_areas}


def default_models(config: Mapping | None = None) -> dict[str, Callable]:
    """The AR, RF and MF-AGL predictors configured from a flat config mapping."""
    c = dict(config or {})
    lag_order = int(c.get("lag_order", 11))
    seed = int(c.get("seed", 0))
    rf_params = {"n_trees": int(c.get("rf.n_trees", 100)), "max_depth": int(c.get("rf.max_depth", 8)), "seed": seed}
    mf_params = {
        k: c[k] for k in ("lag_days", "hidden_size", "epochs", "lr", "beta1", "beta2") if k in c
    }
    mf_params["seed"] = seed
    return {
        "AR": ArPredictor(lag_order),
        "RF": RfPredictor(lag_order, rf_params),
        "MF-AGL": MfAglPredictor(mf_params),
    }


def evaluate_models(
    panel: MixedFrequencyPanel,
    holdout: str | None = None,
    config: Mapping | None = None,
    models: Mapping[str, Callable] | None = None,
    n_jobs: int = 1,
) -> EvaluationReport:
    """Temporal holdout evaluation of each model at the large-area level.

    Labels from ``holdout`` onward are withheld from training.  Each model is a
    callable ``(train_panel, full_panel, period) -> {large_area: prediction}``.
    """
    if holdout is None:
        if not panel.labels:
            raise ValueError("panel has no labels to hold out")
        holdout = max(t for _, t in panel.labels)
    actual = {p: v for (p, t), v in panel.labels.items() if t == holdout}
    if not actual:
        raise ValueError(f"holdout period {holdout} has no labels to score against")
    train = panel.with_labels({k: v for k, v in panel.labels.items() if k[1] < holdout})
    models = dict(models) if models is not None else default_models(config)

    def run(item):
        name, fn = item
        pred = fn(train, panel, holdout)
        return name, {p: float(pred[p]) for p in actual}

    if n_jobs != 1 and len(models) > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(run)(it) for it in models.items())
    else:
        results = [run(it) for it in models.items()]

    scores = []
    for name, pred in results:
        ape = _ape(actual, pred)
        values = np.array(list(ape.values()))
        n = len(values)
        se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        scores.append(ModelScore(name, mape(actual, pred), se, n, ape, pred))
    granular = []
    for fn in models.values():
        granular.extend(getattr(fn, "granular_", []))
    return EvaluationReport(holdout, scores, granular)


# -- data-availability schedule ------------------------------------------------------------


def release_date(period: str, release_lag_days: int | None = None, overrides: Mapping[str, date] | None = None) -> date:
    """Publication date of a month's official labels.

    By default month ``m`` is released on the second-to-last day of month
    ``m + 2``.  ``release_lag_days`` instead counts days after the month ends;
    ``overrides`` pins individual periods to explicit dates.
    """
    if overrides and period in overrides:
        return overrides[period]
    if release_lag_days is not None:
        return period_bounds(period)[1] + timedelta(days=int(release_lag_days))
    return period_bounds(shift_period(period, 2))[1] - timedelta(days=1)


class AuditedLabels(Mapping):
    """Read-only label view that hides unreleased labels and logs every read.

    ``reads`` lists each key handed out; ``blocked`` lists attempts to read a
    label that exists but had not been released at ``as_of``.
    """

    def __init__(self, labels, as_of: date, release: Callable[[str], date]):
        self._labels = dict(labels)
        self._release = release
        self.as_of = as_of
        self.reads: list[tuple[str, str]] = []
        self.blocked: list[tuple[str, str]] = []

    def released(self, key) -> bool:
        return self._release(key[1]) <= self.as_of

    def __getitem__(self, key):
        if key in self._labels and not self.released(key):
            self.blocked.append(key)
            raise KeyError(key)
        value = self._labels[key]
        self.reads.append(key)
        return value

    def __iter__(self):
        return (k for k in self._labels if self.released(k))

    def __len__(self):
        return sum(1 for _ in self)

    def __contains__(self, key):
        return key in self._labels and self.released(key)

    def items(self):
        for k in list(self):
            yield k, self[k]


@dataclass
class ScheduleResult:
    as_of: date
    period: str
    released_through: str | None
    ar: dict[str, float] | None
    rf: dict[str, float] | None
    mfagl: list[GranularPrediction]
    mfagl_aggregate: dict[str, float]
    label_access: AuditedLabels
    notes: list[str] = field(default_factory=list)


def schedule_run(
    panel: MixedFrequencyPanel,
    as_of: date,
    model: MfAglRegressor | None = None,
    config: Mapping | None = None,
    release_lag_days: int | None = None,
    release_overrides: Mapping[str, date] | None = None,
) -> ScheduleResult:
    """Predict the month containing ``as_of`` with only the data available then.

    AR and RF see labels through an :class:`AuditedLabels` view.  MF-AGL sees
    features dated on or before ``as_of``; if no fitted ``model`` is given it is
    trained on the released labels.
    """
    c = dict(config or {})
    if release_lag_days is None and c.get("release_lag_days") not in (None, ""):
        release_lag_days = int(c["release_lag_days"])
    period = period_of_date(as_of)
    labels = AuditedLabels(panel.labels, as_of, lambda t: release_date(t, release_lag_days, release_overrides))
    released = sorted({t for _, t in labels})
    notes = []

    features = {k: v for k, v in panel.features.items() if k[1] <= as_of}
    visible = MixedFrequencyPanel(panel.hierarchy, panel.calendar, features, dict(labels.items()))
    # the forecasters get the audited view itself so every read is logged
    lag_order = int(c.get("lag_order", 11))
    seed = int(c.get("seed", 0))
    forecasts = {}
    for kind in ("ar", "rf"):
        rf_params = {"n_trees": int(c.get("rf.n_trees", 100)), "max_depth": int(c.get("rf.max_depth", 8)), "seed": seed}
        try:
            if not released:
                raise ValueError("no labels released yet")
            f = LabelForecaster(kind=kind, lag_order=lag_order, rf_params=rf_params).fit(labels)
            forecasts[kind] = {p: f.forecast(labels, p, period) for p in panel.hierarchy.large_areas}
        except (ValueError, KeyError) as exc:
            forecasts[kind] = None
            notes.append(f"{kind.upper()} unavailable at {as_of}: {exc}")

    granular, agg = [], {}
    if model is None and visible.labels:
        params = {k: c[k] for k in ("lag_days", "hidden_size", "epochs", "lr", "beta1", "beta2") if k in c}
        model = MfAglRegressor(seed=seed, **params).fit(visible)
    if model is None:
        notes.append(f"MF-AGL unavailable at {as_of}: no labels released to train on")
    else:
        granular = model.nowcast(visible, as_of)
        values = {g.small_area: g.value for g in granular}
        agg = {p: aggregate(values, panel.hierarchy, p) for p in panel.hierarchy.large_areas}
    return ScheduleResult(
        as_of,
        period,
        released[-1] if released else None,
        forecasts["ar"],
        forecasts["rf"],
        granular,
        agg,
        labels,
        notes,
    )


# -- choropleth ------------------------------------------------------------------------------


def _load_geometry(geometry):
    if geometry is None:
        return None
    if isinstance(geometry, Mapping) and geometry.get("type") != "FeatureCollection":
        return dict(geometry)
    doc = geometry if isinstance(geometry, Mapping) else json.loads(Path(geometry).read_text(encoding="utf-8"))
    out = {}
    for feat in doc.get("features", []):
        key = (feat.get("properties") or {}).get("small_area_id", feat.get("id"))
        if key is not None:
            out[str(key)] = feat.get("geometry")
    return out


def export_choropleth(values: Mapping[str, float], metric: str, out=None, geometry=None) -> dict:
    """Write per-area values as a GeoJSON FeatureCollection.

    ``geometry`` may be a GeoJSON FeatureCollection (path or parsed) whose
    features carry ``small_area_id`` properties, or a plain ``id -> geometry``
    mapping.  Areas it does not cover keep a null geometry and are listed under
    the collection's ``warnings`` member.
    """
    shapes = _load_geometry(geometry)
    features, warnings = [], []
    for q, v in values.items():
        v = float(v)
        if not math.isfinite(v):
            raise ValueError(f"value for {q!r} is not finite: {v}")
        geom = None
        if shapes is not None:
            if q in shapes:
                geom = shapes[q]
            else:
                warnings.append(f"no geometry for small area {q!r}")
        features.append(
            {"type": "Feature", "geometry": geom, "properties": {"small_area_id": q, "metric": metric, "value": v}}
        )
    doc = {"type": "FeatureCollection", "features": features, "warnings": warnings}
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return doc
