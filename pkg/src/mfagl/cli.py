"""Command line entry point: ``mfagl <command> [options]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or numeric
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import date
from pathlib import Path

from . import io as mio
from .aggl import GranularPrediction, MfAglRegressor, PanelValidationError, TrainingDivergedError
from .baselines import LabelForecaster
from .config import ConfigError, estimator_params, format_config, resolve_config, world_params
from .geofeatures import ThresholdVisitClassifier, daily_feature_rows, daily_visit_counts
from .harness import default_models, evaluate_models, export_choropleth, schedule_run
from .regions import period_bounds, period_of_date
from .synth import WorldConfig, generate_world

log = logging.getLogger("mfagl")


def _date(text):
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _announce(cfg):
    print("# resolved config")
    print(format_config(cfg))
    print(f"# seed = {cfg['seed']}")


def cmd_simulate(args, cfg):
    world = generate_world(WorldConfig(**world_params(cfg)))
    out = Path(args.out)
    mio.write_panel(out, world.panel)
    mio.write_truth(out / "truth.csv", world.truth)
    h = world.panel.hierarchy
    print(f"wrote {len(h.small_areas)} small areas, {len(world.panel.labels)} labels to {out}")


def cmd_extract_features(args, cfg):
    trajectories = mio.read_trajectories(args.trajectories)
    pois = mio.read_pois(args.pois)
    rows = daily_feature_rows(trajectories, pois)
    mio.write_geofeatures(args.out, rows)
    print(f"wrote {len(rows)} feature rows to {args.out}")
    if args.visits:
        counts = daily_visit_counts(trajectories, pois, ThresholdVisitClassifier(k=args.k))
        mio.write_features(args.visits, {(o, d): float(n) for (o, d), n in counts.items()})
        print(f"wrote {len(counts)} daily visit counts to {args.visits}")


def cmd_train(args, cfg):
    panel = mio.read_panel(args.data)
    model = MfAglRegressor(**estimator_params(cfg)).fit(panel)
    mio.save_checkpoint(args.checkpoint, model)
    print(f"trained on {model.n_samples_} samples; final loss {model.loss_history_[-1] if model.loss_history_ else float('nan')!r}")
    print(f"wrote checkpoint {args.checkpoint}")


def cmd_nowcast(args, cfg):
    panel = mio.read_panel(args.data)
    model = mio.load_checkpoint(args.checkpoint)
    if args.schedule:
        result = schedule_run(panel, args.as_of, model=model, config=cfg)
        preds = result.mfagl
        for note in result.notes:
            print(note)
    else:
        preds = model.nowcast(panel, args.as_of)
    mio.write_predictions(args.out, preds)
    print(f"wrote {len(preds)} predictions for {period_of_date(args.as_of)} to {args.out}")


def cmd_evaluate(args, cfg):
    panel = mio.read_panel(args.data)
    models = default_models(cfg)
    report = evaluate_models(panel, args.holdout, cfg, models)
    print(report.table())
    if args.report:
        report.to_csv(args.report)
        print(f"wrote report {args.report}")
    if args.checkpoint:
        mio.save_checkpoint(args.checkpoint, models["MF-AGL"].model_)
        print(f"wrote checkpoint {args.checkpoint}")
    if args.predictions:
        mio.write_predictions(args.predictions, report.granular)


def cmd_baseline(args, cfg):
    panel = mio.read_panel(args.data)
    target = args.target
    labels = {k: v for k, v in panel.labels.items() if k[1] < target}
    rf_params = {"n_trees": cfg["rf.n_trees"], "max_depth": cfg["rf.max_depth"], "seed": cfg["seed"]}
    f = LabelForecaster(kind=args.kind, lag_order=cfg["lag_order"], rf_params=rf_params).fit(labels)
    as_of = args.as_of or period_bounds(target)[0]
    preds = [GranularPrediction(p, as_of, target, f.forecast(labels, p, target)) for p in panel.hierarchy.large_areas]
    mio.write_predictions(args.out, preds)
    print(f"wrote {len(preds)} {args.kind.upper()} forecasts for {target} to {args.out}")


def cmd_export_map(args, cfg):
    panel = mio.read_panel(args.data)
    model = mio.load_checkpoint(args.checkpoint)
    if args.metric == "yoy":
        values = {q: model.year_over_year(panel, q, args.as_of) for q in panel.hierarchy.small_areas}
    else:
        values = {g.small_area: g.value for g in model.nowcast(panel, args.as_of)}
    doc = export_choropleth(values, args.metric, args.out, args.geometry)
    for w in doc["warnings"]:
        print(f"warning: {w}")
    print(f"wrote {len(doc['features'])} features to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfagl", description="Mixed-frequency aggregate learning for nowcasting.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic world")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract-features", parents=[common], help="geo-features from GPS trajectories")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--pois", required=True)
    p.add_argument("--out", required=True, help="per user-day-office feature CSV")
    p.add_argument("--visits", help="also write daily visit counts in features.csv format")
    p.add_argument("--k", type=int, default=3, help="records-inside threshold of the visit rule")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", parents=[common], help="fit MF-AGL on a panel directory")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("nowcast", parents=[common], help="granular nowcasts at a date")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--as-of", type=_date, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schedule", action="store_true", help="only use features available at --as-of")
    p.set_defaults(func=cmd_nowcast)

    p = sub.add_parser("evaluate", parents=[common], help="temporal holdout comparison of AR, RF and MF-AGL")
    p.add_argument("--data", required=True)
    p.add_argument("--holdout", help="test period YYYY-MM (default: last labeled month)")
    p.add_argument("--report", help="CSV report path")
    p.add_argument("--checkpoint", help="also save the trained MF-AGL model")
    p.add_argument("--predictions", help="also save MF-AGL granular predictions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", parents=[common], help="AR or RF label forecasts")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("ar", "rf"), default="ar")
    p.add_argument("--target", required=True, help="period YYYY-MM to forecast")
    p.add_argument("--as-of", type=_date)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("export-map", parents=[common], help="GeoJSON of per-area values")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--as-of", type=_date, required=True)
    p.add_argument("--metric", choices=("yoy", "value"), default="yoy")
    p.add_argument("--geometry", help="GeoJSON with small_area_id properties to join")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.config, args.set)
        _announce(cfg)
        args.func(args, cfg)
    except (ConfigError, PanelValidationError, ZeroDivisionError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDivergedError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
