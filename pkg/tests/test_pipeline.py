"""Pipeline orchestration tests on a trimmed config (statistical models
only, three horizons) so the suite stays fast; the full registry runs in
the acceptance suite."""

import json

import numpy as np
import pytest

from aftercast.core import DemandSeries, MonthlyObservation, PeriodId, SeriesKey
from aftercast.fixture import register_demo
from aftercast.pipeline import (
    PipelineConfig,
    build_segments,
    insample_snaive_records,
    run_pipeline,
)
from aftercast.store import ArtifactStore, NotFound

SMALL = dict(
    dataset_id="demo",
    horizons=(1, 2, 3),
    n_origins=3,
    gap=1,
    min_train=24,
    models=("snaive", "sba", "arx"),
    k_clusters=2,
)


@pytest.fixture(scope="module")
def ran(tmp_path_factory):
    store = ArtifactStore(tmp_path_factory.mktemp("pipe") / "store")
    register_demo(store, "demo")
    config = PipelineConfig(**SMALL)
    result = run_pipeline(store, config)
    return store, config, result


def artifacts(store, result):
    _, residuals = store.fetch_artifact(result.residuals_run_id)
    _, weights = store.fetch_artifact(result.weights_run_id)
    _, forecasts = store.fetch_artifact(result.forecasts_run_id)
    return residuals.decode(), json.loads(weights), json.loads(forecasts)


def parse_residuals(text):
    lines = text.strip().split("\n")
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        cells = dict(zip(header, line.split(",")))
        cells["horizon"] = int(cells["horizon"])
        for f in ("actual", "forecast", "error"):
            cells[f] = float(cells[f])
        rows.append(cells)
    return rows


def test_config_hash_stable_and_order_insensitive():
    a = PipelineConfig(**SMALL)
    b = PipelineConfig(**{**SMALL, "models": ("arx", "snaive", "sba")})
    assert a.config_hash() == b.config_hash()
    c = PipelineConfig(**{**SMALL, "gap": 0})
    assert c.config_hash() != a.config_hash()


@pytest.mark.parametrize(
    "bad",
    [
        {"models": ("snaive", "nope")},
        {"horizons": ()},
        {"horizons": (3, 1)},
        {"horizons": (0, 1)},
        {"interval_level": 1.0},
        {"n_origins": 0},
        {"k_clusters": 0},
        {"models": ()},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        PipelineConfig(**{**SMALL, **bad})


def test_unregistered_dataset_raises(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    with pytest.raises(NotFound):
        run_pipeline(store, PipelineConfig(**{**SMALL, "dataset_id": "ghost"}))


def test_run_persists_three_artifacts(ran):
    store, _, result = ran
    assert not result.reused
    assert result.leakage_violations == 0
    assert len(set(result.run_ids().values())) == 3
    residuals, weights, forecasts = artifacts(store, result)
    assert residuals.startswith(
        "country,part,model_id,origin,horizon,actual,forecast,error"
    )
    assert weights["model_ids"] == ["arx", "sba", "snaive"]
    assert forecasts["rows"]


def test_rerun_reuses_artifacts(ran):
    store, config, result = ran
    again = run_pipeline(store, config)
    assert again.reused
    assert again.run_ids() == result.run_ids()
    assert again.n_records == result.n_records
    assert again.leakage_violations == result.leakage_violations


def test_ensemble_rows_cover_validation_grid(ran):
    store, _, result = ran
    residuals, _, _ = artifacts(store, result)
    rows = parse_residuals(residuals)
    models = {r["model_id"] for r in rows}
    assert models == {"arx", "sba", "snaive", "ensemble"}
    n_ens = sum(1 for r in rows if r["model_id"] == "ensemble")
    assert n_ens == 120 * 3 * 3  # keys x origins x horizons


def test_ensemble_beats_every_member_in_sample(ran):
    store, _, result = ran
    residuals, weights, _ = artifacts(store, result)
    rows = parse_residuals(residuals)
    segments = {}
    for seg, cells in weights["segments"].items():
        for h in cells:
            segments[(seg, int(h))] = cells[h]

    store_dir, config, _ = ran
    demand_path, _ = store.dataset_paths("demo")
    from aftercast.ingest import load_demand_csv
    series_map, _ = load_demand_csv(demand_path, dataset_id="demo")
    assign = build_segments(series_map, 2)
    from aftercast.pipeline import pattern_of
    pattern = {str(k): pattern_of(a) for k, a in assign.items()}

    cells: dict[tuple, dict] = {}
    for r in rows:
        key = f"{r['country']}/{r['part']}"
        cell = cells.setdefault(
            (pattern[key], r["horizon"]), {"by_model": {}, "slots": {}}
        )
        slot = cell["slots"].setdefault(
            (key, r["origin"]), {"actual": r["actual"], "forecasts": {}}
        )
        slot["forecasts"][r["model_id"]] = r["forecast"]

    for (seg, h), cell in cells.items():
        complete = [
            s for s in cell["slots"].values()
            if {"arx", "sba", "snaive", "ensemble"} <= set(s["forecasts"])
        ]
        assert complete
        denom = sum(s["actual"] for s in complete)
        assert denom > 0
        for model in ("arx", "sba", "snaive", "ensemble"):
            num = sum(
                abs(s["actual"] - s["forecasts"][model]) for s in complete
            )
            cell["by_model"][model] = num / denom
        best_single = min(
            v for m, v in cell["by_model"].items() if m != "ensemble"
        )
        assert cell["by_model"]["ensemble"] <= best_single + 1e-9


def test_weight_book_cells_are_simplex(ran):
    store, _, result = ran
    _, weights, _ = artifacts(store, result)
    assert set(weights["segments"]) == {
        "smooth", "erratic", "intermittent", "lumpy"
    }
    for cells in weights["segments"].values():
        assert sorted(cells) == ["1", "2", "3"]
        for cell in cells.values():
            total = sum(cell["weights"].values())
            assert abs(total - 1.0) < 1e-6
            assert all(w >= -1e-12 for w in cell["weights"].values())
            assert cell["n_rows"] > 0


def test_calibration_offsets_straddle_zero(ran):
    store, _, result = ran
    _, weights, _ = artifacts(store, result)
    assert set(weights["calibration"]) == set(weights["segments"])
    for cals in weights["calibration"].values():
        for cal in cals.values():
            assert cal["lower_offset"] <= 0.0 <= cal["upper_offset"]
            assert cal["n_residuals"] > 0


def test_forecast_rows_shape_and_intervals(ran):
    store, _, result = ran
    _, _, forecasts = artifacts(store, result)
    rows = forecasts["rows"]
    assert len(rows) == 120 * 3
    origin = PeriodId(*map(int, forecasts["origin"].split("-")))
    for r in rows:
        assert 0.0 <= r["lower"] <= r["forecast"] <= r["upper"]
        expect = origin.plus(r["horizon"])
        assert r["period"] == str(expect)


def test_config_embedded_in_weights_artifact(ran):
    store, config, result = ran
    _, weights, _ = artifacts(store, result)
    assert weights["config"] == json.loads(
        json.dumps(config.as_dict())
    )
    assert weights["summary"]["leakage_violations"] == 0


def test_build_segments_full_coverage(ran):
    store, _, _ = ran
    from aftercast.ingest import load_demand_csv
    demand_path, _ = store.dataset_paths("demo")
    series_map, _ = load_demand_csv(demand_path, dataset_id="demo")
    assign = build_segments(series_map, 3)
    assert set(assign) == set(series_map)
    sample = next(iter(assign.values()))
    assert sample.revenue_tier in ("high", "long_tail")
    assert 0 <= sample.cluster_id < 3


def test_insample_snaive_records_hand_check():
    key = SeriesKey("DE", "X")
    start = PeriodId(2020, 1)
    values = [float(10 + i) for i in range(15)]
    obs = tuple(
        MonthlyObservation(start.plus(i), v, v, 1.0)
        for i, v in enumerate(values)
    )
    rows = insample_snaive_records({key: DemandSeries(key, obs)})
    assert len(rows) == 3
    assert rows[0] == (key, start.plus(12), 22.0, 10.0)
    assert rows[2] == (key, start.plus(14), 24.0, 12.0)
