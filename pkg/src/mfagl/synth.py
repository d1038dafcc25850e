"""Synthetic worlds with known granular truth.

Each small area has a latent monthly value built from an area-specific base
level, a seasonal cycle and a step shock.  Daily features are a noisy,
non-negative proxy of that value; large-area labels are exact weighted sums
of the latent values, so estimator error is never confounded with label
error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .aggl import aggregate
from .regions import FrequencyCalendar, MixedFrequencyPanel, RegionHierarchy, period_bounds, period_range, shift_period

__all__ = ["WorldConfig", "SyntheticWorld", "generate_world", "truth_error"]


@dataclass(frozen=True)
class WorldConfig:
    n_large_areas: int = 3
    children_per_large: int = 4
    n_months: int = 24
    start: str = "2018-01"
    seed: int = 0
    base_level: float = 200.0
    base_dispersion: float = 0.6
    seasonal_amplitude: float = 0.15
    seasonal_phase_jitter: float = 1.0
    shock_month: int | None = None  # index into the months; None → three quarters in
    shock_magnitude: float = 0.3
    shock_dispersion: float = 0.8
    noise_sigma: float = 0.02
    visit_ratio: float = 1.0
    feature_noise: float = 0.05

    def __post_init__(self):
        for name in ("n_large_areas", "children_per_large", "n_months"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("noise_sigma", "feature_noise", "base_dispersion", "seasonal_phase_jitter", "shock_dispersion"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.base_level <= 0 or self.visit_ratio <= 0:
            raise ValueError("base_level and visit_ratio must be positive")
        if not 0 <= self.seasonal_amplitude < 1:
            raise ValueError("seasonal_amplitude must lie in [0, 1)")
        if self.shock_month is not None and not 0 <= self.shock_month < self.n_months:
            raise ValueError("shock_month must index one of the generated months")

    @property
    def resolved_shock_month(self) -> int:
        return self.shock_month if self.shock_month is not None else (3 * self.n_months) // 4


@dataclass(frozen=True)
class SyntheticWorld:
    panel: MixedFrequencyPanel
    truth: Mapping[tuple[str, str], float]  # (small_area, period) → latent monthly value
    config: WorldConfig


def generate_world(config: WorldConfig | None = None) -> SyntheticWorld:
    config = config or WorldConfig()
    rng = np.random.default_rng(config.seed)
    large = [f"P{i + 1:02d}" for i in range(config.n_large_areas)]
    pairs = [(f"{p}-Q{j + 1:02d}", p) for p in large for j in range(config.children_per_large)]
    hierarchy = RegionHierarchy.from_pairs(pairs)
    periods = period_range(config.start, shift_period(config.start, config.n_months - 1))
    calendar = FrequencyCalendar.for_periods(periods[0], periods[-1])

    n_small = len(pairs)
    base = config.base_level * np.exp(config.base_dispersion * rng.standard_normal(n_small))
    phase = config.seasonal_phase_jitter * rng.uniform(-1.0, 1.0, n_small)
    shock = config.shock_magnitude * (1.0 + config.shock_dispersion * rng.uniform(-1.0, 1.0, n_small))
    shock_at = config.resolved_shock_month

    truth = {}
    for k, t in enumerate(periods):
        month = int(t[5:7])
        season = 1.0 + config.seasonal_amplitude * np.sin(2 * math.pi * (month - 1) / 12 + phase)
        level = 1.0 + shock * (k >= shock_at)
        noise = 1.0 + config.noise_sigma * rng.standard_normal(n_small)
        values = np.maximum(base * season * level * noise, 1e-9)
        for i, (q, _) in enumerate(pairs):
            truth[(q, t)] = float(values[i])

    features = {}
    for t in periods:
        ticks = calendar.ticks_in(t)
        n_days = len(ticks)
        for q, _ in pairs:
            signal = config.visit_ratio * truth[(q, t)] / n_days
            noise = config.feature_noise * signal * rng.standard_normal(n_days)
            for tau, e in zip(ticks, noise):
                features[(q, tau)] = max(signal + float(e), 0.0)

    labels = {}
    for t in periods:
        child_values = {q: truth[(q, t)] for q, _ in pairs}
        for p in large:
            labels[(p, t)] = aggregate(child_values, hierarchy, p)

    return SyntheticWorld(MixedFrequencyPanel(hierarchy, calendar, features, labels), truth, config)


def truth_error(world: SyntheticWorld, predictions: Mapping[tuple[str, str], float], metric: str = "mape") -> float:
    """Compare granular predictions with the latent truth.

    ``metric`` is ``"mape"`` (percent) or ``"pearson"``.
    """
    keys = sorted(predictions)
    if not keys:
        raise ValueError("empty evaluation set")
    missing = [k for k in keys if k not in world.truth]
    if missing:
        raise KeyError(f"no truth for {missing[:3]}")
    y = np.array([world.truth[k] for k in keys])
    yhat = np.array([predictions[k] for k in keys], dtype=float)
    if metric == "mape":
        return float(np.mean(np.abs(y - yhat) / y) * 100.0)
    if metric == "pearson":
        if np.ptp(y) == 0 or np.ptp(yhat) == 0:
            raise ValueError("correlation undefined: predictions or truth have zero variance")
        return float(np.corrcoef(y, yhat)[0, 1])
    raise ValueError(f"unknown metric {metric!r}; use 'mape' or 'pearson'")


