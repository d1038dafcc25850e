from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest

from mfagl import io as mio
from mfagl.aggl import GranularPrediction, MfAglRegressor
from mfagl.geofeatures import GpsTrajectory, Poi, daily_feature_rows
from mfagl.synth import WorldConfig, generate_world


@pytest.fixture(scope="module")
def small_world():
    return generate_world(WorldConfig(n_large_areas=2, children_per_large=2, n_months=3, seed=5))


def test_panel_roundtrip(tmp_path, small_world):
    mio.write_panel(tmp_path, small_world.panel)
    again = mio.read_panel(tmp_path)
    assert again == small_world.panel
    assert dict(again.features) == dict(small_world.panel.features)  # bit-exact floats


def test_hierarchy_weights_roundtrip_and_default(tmp_path):
    from mfagl.regions import RegionHierarchy

    h = RegionHierarchy.from_pairs([("a", "A"), ("b", "A"), ("c", "B")], {"a": 0.25, "b": 1 / 3})
    mio.write_hierarchy(tmp_path / "h.csv", h)
    assert mio.read_hierarchy(tmp_path / "h.csv") == h
    (tmp_path / "h2.csv").write_text("small_area_id,large_area_id\nx,X\n")
    assert mio.read_hierarchy(tmp_path / "h2.csv").weight_of["x"] == 1.0


def test_truth_roundtrip(tmp_path, small_world):
    mio.write_truth(tmp_path / "truth.csv", small_world.truth)
    assert mio.read_truth(tmp_path / "truth.csv") == dict(small_world.truth)


def test_predictions_roundtrip(tmp_path):
    preds = [
        GranularPrediction("q1", date(2020, 10, 31), "2020-10", 123.456789012345),
        GranularPrediction("q2", date(2020, 10, 1), "2020-10", 1e-7),
    ]
    mio.write_predictions(tmp_path / "p.csv", preds)
    assert mio.read_predictions(tmp_path / "p.csv") == preds
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "as_of_date,small_area_id,period,predicted_value"


def test_trajectories_and_pois_roundtrip(tmp_path):
    t0 = datetime(2020, 10, 5, 8, 0, tzinfo=timezone.utc)
    trajs = [
        GpsTrajectory("u1", tuple((t0 + timedelta(seconds=37 * k), 35.0 + 1e-5 * k, 139.123456789) for k in range(5))),
        GpsTrajectory("u2", ((t0, -33.9, 151.2),)),
    ]
    mio.write_trajectories(tmp_path / "t.csv", trajs)
    assert mio.read_trajectories(tmp_path / "t.csv") == trajs
    pois = [Poi("o1", 35.0, 139.0, 25.5), Poi("o2", 34.0, 135.0, 40.0)]
    mio.write_pois(tmp_path / "pois.csv", pois)
    assert mio.read_pois(tmp_path / "pois.csv") == pois


def test_trajectory_reader_merges_duplicates_and_rejects_conflicts(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(
        "user_id,timestamp,lat,lon\n"
        "u,2020-10-05T08:01:00Z,35.0,139.0\n"
        "u,2020-10-05T08:00:00Z,35.0,139.0\n"
        "u,2020-10-05T08:01:00Z,35.0,139.0\n"
    )
    (traj,) = mio.read_trajectories(path)
    assert len(traj) == 2 and traj.points[0][0] < traj.points[1][0]
    path.write_text("user_id,timestamp,lat,lon\nu,2020-10-05T08:00:00Z,35.0,139.0\nu,2020-10-05T08:00:00Z,36.0,139.0\n")
    with pytest.raises(mio.CsvFormatError, match="two locations"):
        mio.read_trajectories(path)


def test_geofeatures_roundtrip_keeps_sentinel_literal(tmp_path):
    t0 = datetime(2020, 10, 5, 8, 0, tzinfo=timezone.utc)
    trajs = [GpsTrajectory("u", tuple((t0 + timedelta(minutes=k), 35.0, 139.0 + 1e-4 * k) for k in range(4)))]
    rows = daily_feature_rows(trajs, [Poi("o", 35.0, 139.0, 30.0)])
    mio.write_geofeatures(tmp_path / "g.csv", rows)
    assert mio.read_geofeatures(tmp_path / "g.csv") == rows
    body = (tmp_path / "g.csv").read_text()
    assert ",-1," in body or body.rstrip().endswith(",-1")


def test_reader_errors(tmp_path):
    (tmp_path / "labels.csv").write_text("period,large_area_id\n2020-01,A\n")
    with pytest.raises(mio.CsvFormatError, match="missing columns"):
        mio.read_labels(tmp_path / "labels.csv")
    (tmp_path / "labels.csv").write_text("period,large_area_id,value\n2020-1,A,3\n")
    with pytest.raises(mio.CsvFormatError, match="YYYY-MM"):
        mio.read_labels(tmp_path / "labels.csv")
    (tmp_path / "f.csv").write_text("date,small_area_id,visit_count\n2020-01-01,a,-2\n")
    with pytest.raises(mio.CsvFormatError, match="non-negative"):
        mio.read_features(tmp_path / "f.csv")
    (tmp_path / "f.csv").write_text("date,small_area_id,visit_count\n2020-01-01,a,nan\n")
    with pytest.raises(mio.CsvFormatError, match="finite"):
        mio.read_features(tmp_path / "f.csv")


def test_checkpoint_roundtrip_is_bit_exact(tmp_path, small_world):
    model = MfAglRegressor(epochs=1, hidden_size=4, mlp_hidden=(3,), lag_days=6, seed=2).fit(small_world.panel)
    mio.save_checkpoint(tmp_path / "m.json", model)
    loaded = mio.load_checkpoint(tmp_path / "m.json")
    assert loaded.network_.theta.tobytes() == model.network_.theta.tobytes()
    assert loaded.get_params() == model.get_params()
    assert loaded.vocabulary_ == model.vocabulary_
    assert loaded.hierarchy_ == model.hierarchy_
    assert (loaded.input_scale_, loaded.output_scale_) == (model.input_scale_, model.output_scale_)
    assert loaded.loss_history_ == model.loss_history_
    tau = date(2018, 3, 15)
    a = [g.value for g in model.nowcast(small_world.panel, tau)]
    b = [g.value for g in loaded.nowcast(small_world.panel, tau)]
    assert a == b
    mio.save_checkpoint(tmp_path / "again.json", loaded)
    assert (tmp_path / "again.json").read_bytes() == (tmp_path / "m.json").read_bytes()


def test_checkpoint_rejects_foreign_files(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other", "version": 1}')
    with pytest.raises(ValueError, match="not an mfagl checkpoint"):
        mio.load_checkpoint(tmp_path / "x.json")
    (tmp_path / "y.json").write_text('{"format": "mfagl-checkpoint", "version": 99}')
    with pytest.raises(ValueError, match="version"):
        mio.load_checkpoint(tmp_path / "y.json")
