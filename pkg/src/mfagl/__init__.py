"""Mixed-frequency aggregate learning: nowcast fine-grained quantities from
daily proxy features and coarse monthly aggregate labels."""

from .aggl import (
    GranularPrediction,
    MfAglRegressor,
    PanelValidationError,
    TrainingDivergedError,
    aggregate,
    loss,
    predict_granular,
    train,
    year_over_year,
)
from .baselines import ArRegressor, LabelForecaster, RandomForestRegressor, fit_ar, fit_rf, predict_ar, predict_rf
from .harness import EvaluationReport, evaluate_models, export_choropleth, mape, schedule_run
from .io import load_checkpoint, read_panel, save_checkpoint, write_panel
from .netcore import AdamState, Network, adam_step
from .regions import (
    FeatureWindow,
    FrequencyCalendar,
    MixedFrequencyPanel,
    RegionHierarchy,
    build_feature_window,
    map_region,
    map_time,
    validate_panel,
)
from .synth import SyntheticWorld, WorldConfig, generate_world, truth_error

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ArRegressor",
    "EvaluationReport",
    "FeatureWindow",
    "FrequencyCalendar",
    "GranularPrediction",
    "LabelForecaster",
    "MfAglRegressor",
    "MixedFrequencyPanel",
    "Network",
    "PanelValidationError",
    "RandomForestRegressor",
    "RegionHierarchy",
    "SyntheticWorld",
    "TrainingDivergedError",
    "WorldConfig",
    "adam_step",
    "aggregate",
    "build_feature_window",
    "evaluate_models",
    "export_choropleth",
    "fit_ar",
    "fit_rf",
    "generate_world",
    "load_checkpoint",
    "loss",
    "map_region",
    "map_time",
    "mape",
    "predict_ar",
    "predict_granular",
    "predict_rf",
    "read_panel",
    "save_checkpoint",
    "schedule_run",
    "train",
    "truth_error",
    "validate_panel",
    "write_panel",
    "year_over_year",
]
