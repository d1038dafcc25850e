"""Mixed-frequency aggregate learning.

A recurrent predictor ``f`` maps the daily feature window of a small area to
that area's (latent) monthly value.  It is trained only against monthly
large-area labels: for every labeled ``(p, t)`` and every day ``τ`` of ``t``
the weighted sum of the children's predictions is compared with the label.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .netcore import AdamState, Network, adam_step
from .regions import (
    MixedFrequencyPanel,
    RegionHierarchy,
    Vocabulary,
    build_feature_window,
    map_region,
    period_of_date,
    validate_panel,
)

__all__ = [
    "GranularPrediction",
    "MfAglRegressor",
    "PanelValidationError",
    "TrainingDivergedError",
    "aggregate",
    "loss",
    "train",
    "predict_granular",
    "year_over_year",
    "same_day_previous_year",
]

logger = logging.getLogger(__name__)


class PanelValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        head = "; ".join(str(v) for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"panel failed validation: {head}{more}")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class GranularPrediction:
    small_area: str
    as_of: date
    period: str
    value: float


def aggregate(predictions: Mapping[str, float], hierarchy: RegionHierarchy, p: str) -> float:
    """Weighted sum of the children's predictions for large area ``p``."""
    total = 0.0
    for q in hierarchy.children(p):
        if q not in predictions:
            raise KeyError(f"missing prediction for child {q!r} of {p!r}")
        total += hierarchy.weight_of[q] * predictions[q]
    return total


def same_day_previous_year(tau: date) -> date:
    try:
        return tau.replace(year=tau.year - 1)
    except ValueError:  # Feb 29
        return tau.replace(year=tau.year - 1, day=28)


class _Design:
    """Dense lag windows and dummy blocks for every small area and day of a panel."""

    def __init__(self, panel: MixedFrequencyPanel, vocabulary: Vocabulary, lag_days: int, days):
        self.days = list(days)
        self.day_index = {tau: i for i, tau in enumerate(self.days)}
        areas = panel.hierarchy.small_areas
        self.area_index = {q: i for i, q in enumerate(areas)}
        if self.days:
            first = self.days[0] - timedelta(days=lag_days - 1)
            dense = panel.dense_features(first, self.days[-1])
            offsets = np.array([(tau - first).days for tau in self.days])
            cols = offsets[:, None] + np.arange(-lag_days + 1, 1)[None, :]
            self.lags = dense[:, cols]  # (n_small, n_days, lag_days)
        else:
            self.lags = np.zeros((len(areas), 0, lag_days))
        n_years = len(vocabulary.years)
        n_cal = n_years + 12 + vocabulary.n_days
        self.calendar_dummies = np.zeros((len(self.days), n_cal))
        for i, tau in enumerate(self.days):
            if tau.year not in vocabulary.years:
                raise ValueError(f"year {tau.year} not in training vocabulary {vocabulary.years}")
            self.calendar_dummies[i, vocabulary.years.index(tau.year)] = 1.0
            self.calendar_dummies[i, n_years + tau.month - 1] = 1.0
            self.calendar_dummies[i, n_years + 12 + vocabulary.day_index(tau)] = 1.0
        n_large, n_small = len(vocabulary.large_areas), len(vocabulary.small_areas)
        self.area_dummies = np.zeros((len(areas), n_large + n_small))
        for q, i in self.area_index.items():
            p = panel.hierarchy.parent_of[q]
            if p not in vocabulary.large_areas or q not in vocabulary.small_areas:
                raise KeyError(f"area ({q!r}, {p!r}) not in training vocabulary")
            self.area_dummies[i, vocabulary.large_areas.index(p)] = 1.0
            self.area_dummies[i, n_large + vocabulary.small_areas.index(q)] = 1.0

    def batch(self, area_rows, day_row):
        lags = self.lags[area_rows, day_row]
        cal = np.broadcast_to(self.calendar_dummies[day_row], (len(area_rows), self.calendar_dummies.shape[1]))
        extras = np.concatenate([cal, self.area_dummies[area_rows]], axis=1)
        return lags, extras


class MfAglRegressor(BaseEstimator, RegressorMixin):
    """LSTM + MLP predictor of granular monthly values, trained on aggregated labels.

    Parameters
    ----------
    lag_days : int
        Length of the daily visit window fed to the LSTM, one value per step.
    hidden_size, mlp_hidden : int, tuple of int
        LSTM width and MLP hidden layer widths.
    output : {"softplus", "identity"}
        Output transform; softplus keeps predictions strictly positive.
    epochs, lr, beta1, beta2, eps : training schedule for Adam with batch size 1.
    seed : int
        Seeds initialization and the per-epoch sample order.
    day_kind : {"month", "week"}
        Whether the day dummy encodes day-of-month or day-of-week.
    scale : bool
        Divide inputs by their mean positive value and express outputs in units
        of the mean per-child label.  Off by default: in raw units the daily
        lags dominate the 0/1 dummies, which keeps the within-parent split tied
        to the features; with rescaled lags the dummies soak up that split.
    """

    def __init__(
        self,
        lag_days=31,
        hidden_size=32,
        mlp_hidden=(32,),
        hidden_activation="tanh",
        output="softplus",
        epochs=600,
        lr=1e-4,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        seed=0,
        day_kind="month",
        scale=False,
    ):
        self.lag_days = lag_days
        self.hidden_size = hidden_size
        self.mlp_hidden = mlp_hidden
        self.hidden_activation = hidden_activation
        self.output = output
        self.epochs = epochs
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed
        self.day_kind = day_kind
        self.scale = scale

    # -- training -------------------------------------------------------

    def _check_params(self):
        if int(self.lag_days) < 1:
            raise ValueError(f"lag_days must be >= 1, got {self.lag_days}")
        if int(self.epochs) < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def _training_samples(self, panel):
        """``(p, t, label, ticks)`` for every labeled pair, in panel order."""
        samples = []
        for p, t in panel.labeled_pairs():
            samples.append((p, t, float(panel.labels[(p, t)]), panel.calendar.ticks_in(t)))
        return samples

    def fit(self, X: MixedFrequencyPanel, y=None):
        panel = X
        self._check_params()
        violations = validate_panel(panel)
        if violations:
            raise PanelValidationError(violations)
        samples = self._training_samples(panel)
        if not samples:
            raise ValueError("panel has no labeled (large area, period) pairs")

        self.hierarchy_ = panel.hierarchy
        self.vocabulary_ = Vocabulary.from_panel(panel, self.day_kind)
        positive = [v for v in panel.features.values() if v > 0]
        self.input_scale_ = float(np.mean(positive)) if (self.scale and positive) else 1.0
        per_child = []
        for p, _, value, _ in samples:
            wsum = sum(self.hierarchy_.weight_of[q] for q in self.hierarchy_.children(p))
            if wsum > 0:
                per_child.append(value / wsum)
        mean_child = float(np.mean(per_child)) if per_child else 0.0
        self.output_scale_ = mean_child if (self.scale and mean_child > 0) else 1.0

        self.network_ = Network(
            input_size=1,
            hidden_size=self.hidden_size,
            extra_size=self.vocabulary_.width,
            mlp_hidden=tuple(self.mlp_hidden),
            hidden_activation=self.hidden_activation,
            output=self.output,
            seed=self.seed,
        )
        self.loss_history_ = []
        self.n_samples_ = sum(len(ticks) for *_, ticks in samples)
        if int(self.epochs) > 0:
            self._train(panel, samples)
        return self

    def _train(self, panel, samples):
        design = _Design(panel, self.vocabulary_, int(self.lag_days), panel.calendar.fine_ticks)
        h = self.hierarchy_
        rows, weights, days, targets, origin = [], [], [], [], []
        for p, t, value, ticks in samples:
            children = h.children(p)
            r = np.array([design.area_index[q] for q in children])
            w = np.array([h.weight_of[q] for q in children])
            for tau in ticks:
                rows.append(r)
                weights.append(w)
                days.append(design.day_index[tau])
                targets.append(value / self.output_scale_)
                origin.append((p, t, tau))
        lags = design.lags / self.input_scale_
        net = self.network_
        state = AdamState.for_params(net.theta, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
        rng = np.random.default_rng([int(self.seed), 1])
        scale2 = self.output_scale_**2
        grad = np.zeros_like(net.theta)
        for epoch in range(1, int(self.epochs) + 1):
            total = 0.0
            for s in rng.permutation(len(targets)):
                r, d = rows[s], days[s]
                cal = np.broadcast_to(design.calendar_dummies[d], (len(r), design.calendar_dummies.shape[1]))
                extras = np.concatenate([cal, design.area_dummies[r]], axis=1)
                out = net.forward(lags[r, d], extras)
                resid = targets[s] - float(weights[s] @ out)
                if not math.isfinite(resid):
                    p, t, tau = origin[s]
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch}, sample (large_area={p}, period={t}, day={tau})"
                    )
                total += resid * resid
                adam_step(state, net.theta, net.backward(-2.0 * resid * weights[s], out=grad))
            epoch_loss = total * scale2
            self.loss_history_.append(epoch_loss)
            logger.info("epoch %d loss %.6g", epoch, epoch_loss)
        self.adam_state_ = state

    # -- prediction -----------------------------------------------------

    def _design_for(self, panel, days):
        return _Design(panel, self.vocabulary_, int(self.lag_days), days)

    def predict_granular(self, panel: MixedFrequencyPanel, q: str, tau: date) -> GranularPrediction:
        """Nowcast of small area ``q``'s value for the month containing ``tau``."""
        check_is_fitted(self, "network_")
        if q not in self.vocabulary_.small_areas:
            raise KeyError(f"small area {q!r} not in training vocabulary")
        window = build_feature_window(panel, q, tau, int(self.lag_days), self.vocabulary_)
        lags = window.visit_lags[None, :] / self.input_scale_
        value = float(self.network_.predict(lags, window.dummies[None, :])[0]) * self.output_scale_
        return GranularPrediction(q, tau, self._period(panel, tau), value)

    @staticmethod
    def _period(panel, tau):
        return panel.calendar.period_of.get(tau) or period_of_date(tau)

    def nowcast(self, panel: MixedFrequencyPanel, tau: date, areas=None) -> list[GranularPrediction]:
        """Granular nowcasts for every (or the given) small area at ``tau``, batched."""
        check_is_fitted(self, "network_")
        areas = list(areas) if areas is not None else list(panel.hierarchy.small_areas)
        for q in areas:
            if q not in self.vocabulary_.small_areas:
                raise KeyError(f"small area {q!r} not in training vocabulary")
        design = self._design_for(panel, [tau])
        r = np.array([design.area_index[q] for q in areas], dtype=int)
        lags, extras = design.batch(r, 0)
        values = self.network_.predict(lags / self.input_scale_, extras) * self.output_scale_
        period = self._period(panel, tau)
        return [GranularPrediction(q, tau, period, float(v)) for q, v in zip(areas, values)]

    def predict(self, X, y=None):
        """Predictions for ``X = (panel, [(small_area, date), ...])``."""
        panel, keys = X
        return np.array([self.predict_granular(panel, q, tau).value for q, tau in keys])

    def predict_aggregate(self, panel: MixedFrequencyPanel, p: str, tau: date) -> float:
        preds = {g.small_area: g.value for g in self.nowcast(panel, tau, self.hierarchy_.children(p))}
        return aggregate(preds, self.hierarchy_, p)

    def loss(self, panel: MixedFrequencyPanel) -> float:
        """Aggregate squared error summed over labeled pairs and their days."""
        check_is_fitted(self, "network_")
        pairs = panel.labeled_pairs()
        if not pairs:
            raise ValueError("panel has no labeled (large area, period) pairs")
        ticks = sorted({tau for _, t in pairs for tau in panel.calendar.ticks_in(t)})
        design = self._design_for(panel, ticks)
        h = panel.hierarchy
        total = 0.0
        for p, t in pairs:
            children = h.children(p)
            r = np.array([design.area_index[q] for q in children])
            w = np.array([h.weight_of[q] for q in children])
            for tau in panel.calendar.ticks_in(t):
                lags, extras = design.batch(r, design.day_index[tau])
                out = self.network_.predict(lags / self.input_scale_, extras) * self.output_scale_
                resid = panel.labels[(p, t)] - float(w @ out)
                total += resid * resid
        return total

    def year_over_year(self, panel: MixedFrequencyPanel, q: str, tau: date) -> float:
        """Relative change of the nowcast at ``tau`` against the same day a year earlier."""
        prior = same_day_previous_year(tau)
        for day in (tau, prior):
            window = build_feature_window(panel, q, day, int(self.lag_days), self.vocabulary_)
            if window.padding_mask.all():
                raise ValueError(f"no features for {q!r} in the window ending {day}")
        now = self.predict_granular(panel, q, tau).value
        before = self.predict_granular(panel, q, prior).value
        return now / before - 1.0


def train(panel: MixedFrequencyPanel, config: Mapping | None = None) -> MfAglRegressor:
    return MfAglRegressor(**dict(config or {})).fit(panel)


def loss(panel: MixedFrequencyPanel, model: MfAglRegressor) -> float:
    return model.loss(panel)


def predict_granular(model: MfAglRegressor, panel: MixedFrequencyPanel, q: str, tau: date) -> GranularPrediction:
    return model.predict_granular(panel, q, tau)


def year_over_year(model: MfAglRegressor, panel: MixedFrequencyPanel, q: str, tau: date) -> float:
    return model.year_over_year(panel, q, tau)
