"""Run orchestration.

Loads a registered dataset, segments it, backtests the model registry,
learns per-segment ensemble weights, calibrates intervals from the
ensemble residuals, produces calibrated forward forecasts, and persists
three artifacts keyed by (dataset_id, config_hash):

* ``residuals``  the full backtest record table as CSV, ensemble rows
  included,
* ``weights``    the weight book plus interval calibration and a run
  summary,
* ``forecasts``  calibrated forward forecasts per series.

Re-running an identical config reuses the stored artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .backtest import BacktestRecord, make_plan, run_backtest
from .core import DemandSeries, PeriodId, SeriesKey
from .ensemble import (
    EnsembleWeights,
    apply_calibration,
    calibrate_intervals,
    combine,
    learn_weights,
)
from .ingest import load_demand_csv, load_exogenous_csv
from .models.gbt import GbtSeriesInput
from .models.mlp import MlpSeriesInput
from .models.registry import build_global, default_specs, local_forecast
from .segmentation import (
    PRICE_BAND_ORDINAL,
    SegmentAssignment,
    classify_pattern,
    cluster_series,
    intermittency_profile,
    pareto_tiers,
    price_bands,
    seasonality_strength,
    size_classes,
)
from .serialize import canonical_json, hash_bytes
from .store import ArtifactStore


@dataclass(frozen=True)
class PipelineConfig:
    dataset_id: str = "demo"
    horizons: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    n_origins: int = 6
    gap: int = 1
    min_train: int = 24
    models: tuple[str, ...] = (
        "snaive", "ets_seasonal_additive", "sba", "arx", "gbt", "mlp"
    )
    interval_level: float = 0.8
    k_clusters: int = 4

    def __post_init__(self):
        if not self.horizons or list(self.horizons) != sorted(set(self.horizons)):
            raise ValueError("horizons must be distinct ascending positive ints")
        if min(self.horizons) < 1:
            raise ValueError("horizons must be >= 1")
        if self.n_origins < 1:
            raise ValueError("n_origins must be >= 1")
        if self.gap < 0:
            raise ValueError("gap must be >= 0")
        if self.min_train < 1:
            raise ValueError("min_train must be >= 1")
        if not 0.0 < self.interval_level < 1.0:
            raise ValueError("interval_level must be in (0,1)")
        if self.k_clusters < 1:
            raise ValueError("k_clusters must be >= 1")
        known = {s.model_id for s in default_specs()}
        unknown = [m for m in self.models if m not in known]
        if unknown:
            raise ValueError(f"unknown model ids {unknown}")
        if not self.models:
            raise ValueError("at least one model required")

    def as_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "horizons": list(self.horizons),
            "n_origins": self.n_origins,
            "gap": self.gap,
            "min_train": self.min_train,
            "models": sorted(self.models),
            "interval_level": self.interval_level,
            "k_clusters": self.k_clusters,
        }

    def config_hash(self) -> str:
        return hash_bytes(canonical_json(self.as_dict()))


@dataclass(frozen=True)
class PipelineResult:
    dataset_id: str
    config_hash: str
    residuals_run_id: str
    weights_run_id: str
    forecasts_run_id: str
    n_records: int
    n_skips: int
    leakage_violations: int
    reused: bool

    def run_ids(self) -> dict[str, str]:
        return {
            "residuals": self.residuals_run_id,
            "weights": self.weights_run_id,
            "forecasts": self.forecasts_run_id,
        }


def build_segments(
    series_map: dict[SeriesKey, DemandSeries], k_clusters: int = 4
) -> dict[SeriesKey, SegmentAssignment]:
    """Assemble the full segmentation for every series in the dataset."""
    keys = sorted(series_map)
    revenue = {
        k: sum(o.revenue for o in series_map[k].observations) for k in keys
    }
    mean_units = {
        k: float(np.mean(series_map[k].actuals)) for k in keys
    }
    prices = {}
    for k in keys:
        observed = [o.price for o in series_map[k].observations if o.price]
        prices[k] = float(np.mean(observed)) if observed else None

    tiers = pareto_tiers(revenue)
    sizes = size_classes(mean_units)
    bands = price_bands(prices)
    profiles = {k: intermittency_profile(series_map[k]) for k in keys}
    seasonal = {k: seasonality_strength(series_map[k]) for k in keys}

    descriptors = {
        k: (
            profiles[k].adi,
            profiles[k].cv2,
            seasonal[k],
            float(np.log1p(mean_units[k])),
        )
        for k in keys
    }
    k_eff = min(k_clusters, len(keys))
    clusters = cluster_series(descriptors, k_eff)

    return {
        k: SegmentAssignment(
            key=k,
            revenue_tier=tiers[k],
            size_class=sizes[k],
            cluster_id=clusters[k],
            adi=profiles[k].adi,
            cv2=profiles[k].cv2,
            seasonality_strength=seasonal[k],
            price_band=bands[k],
        )
        for k in keys
    }


def pattern_of(assignment: SegmentAssignment) -> str:
    return classify_pattern(assignment.adi, assignment.cv2)


def _restrict_weights(
    weights: dict[str, float], present: set[str]
) -> dict[str, float]:
    """Renormalize over the members that produced a forecast."""
    kept = {m: w for m, w in weights.items() if m in present and w > 0.0}
    total = sum(kept.values())
    if total <= 0.0:
        return {m: 1.0 / len(present) for m in sorted(present)}
    return {m: w / total for m, w in kept.items()}


def _learn_cell(
    rows: list[tuple[float, dict[str, float]]],
    model_ids: list[str],
    segment_id: str,
    horizon: int,
) -> EnsembleWeights | None:
    if not rows:
        return None
    try:
        return learn_weights(rows, model_ids, segment_id, horizon)
    except ValueError:
        present = sorted({m for _, fs in rows for m in fs})
        if not present:
            return None
        return learn_weights(rows, present, segment_id, horizon)


def run_pipeline(store: ArtifactStore, config: PipelineConfig) -> PipelineResult:
    config_hash = config.config_hash()
    ds = config.dataset_id
    existing = {
        kind: store.find_run(ds, config_hash, kind)
        for kind in ("residuals", "weights", "forecasts")
    }
    if all(existing.values()):
        _, weights_payload = store.fetch_artifact(existing["weights"])
        summary = json.loads(weights_payload).get("summary", {})
        return PipelineResult(
            dataset_id=ds,
            config_hash=config_hash,
            residuals_run_id=existing["residuals"],
            weights_run_id=existing["weights"],
            forecasts_run_id=existing["forecasts"],
            n_records=int(summary.get("n_records", 0)),
            n_skips=int(summary.get("n_skips", 0)),
            leakage_violations=int(summary.get("leakage_violations", 0)),
            reused=True,
        )

    demand_path, exog_path = store.dataset_paths(ds)
    series_map, _version = load_demand_csv(demand_path, dataset_id=ds)
    exog = load_exogenous_csv(exog_path, dataset_id=ds)

    timeline_start = min(s.observations[0].period for s in series_map.values())
    timeline_end = max(s.last_period for s in series_map.values())
    history_length = timeline_end.index - timeline_start.index + 1

    segments = build_segments(series_map, config.k_clusters)
    specs = [s for s in default_specs() if s.model_id in config.models]
    model_ids = sorted(s.model_id for s in specs)

    plan = make_plan(
        history_length,
        config.n_origins,
        config.gap,
        list(config.horizons),
        config.min_train,
    )
    result = run_backtest(
        series_map, exog.frames_by_country, plan, specs, segments,
        timeline_start,
    )
    leakage = len(result.leakage_violations())

    # validation rows per (pattern segment, horizon)
    cell_rows: dict[tuple[str, int], list[tuple[float, dict[str, float]]]] = {}
    joined: dict[tuple[SeriesKey, PeriodId, int], dict] = {}
    for r in result.records:
        slot = joined.setdefault(
            (r.key, r.origin, r.horizon), {"actual": r.actual, "forecasts": {}}
        )
        slot["forecasts"][r.model_id] = r.forecast
    for (key, origin, horizon) in sorted(joined):
        slot = joined[(key, origin, horizon)]
        seg = pattern_of(segments[key])
        cell_rows.setdefault((seg, horizon), []).append(
            (slot["actual"], slot["forecasts"])
        )

    weight_book: dict[str, dict[int, EnsembleWeights]] = {}
    for (seg, horizon) in sorted(cell_rows):
        learned = _learn_cell(cell_rows[(seg, horizon)], model_ids, seg, horizon)
        if learned is not None:
            weight_book.setdefault(seg, {})[horizon] = learned

    # ensemble rows on the same validation grid
    ensemble_records: list[BacktestRecord] = []
    for (key, origin, horizon) in sorted(joined):
        seg = pattern_of(segments[key])
        cell = weight_book.get(seg, {}).get(horizon)
        if cell is None:
            continue
        forecasts = joined[(key, origin, horizon)]["forecasts"]
        needed = {m for m, w in cell.weights.items() if w > 1e-12}
        if not needed <= set(forecasts):
            continue
        value = max(
            0.0, sum(cell.weights[m] * forecasts[m] for m in needed)
        )
        ensemble_records.append(
            BacktestRecord(
                key, "ensemble", origin,
                horizon, joined[(key, origin, horizon)]["actual"], value,
            )
        )
    result.records.extend(ensemble_records)

    # interval calibration from ensemble residuals per segment
    residuals_by_seg: dict[str, dict[int, list[float]]] = {}
    for r in ensemble_records:
        seg = pattern_of(segments[r.key])
        residuals_by_seg.setdefault(seg, {}).setdefault(r.horizon, []).append(
            r.error
        )
    calibration = {
        seg: calibrate_intervals(by_h, seg, level=config.interval_level)
        for seg, by_h in sorted(residuals_by_seg.items())
    }

    forecast_rows = _forward_forecasts(
        series_map, exog.frames_by_country, segments, specs, config,
        weight_book, calibration, timeline_end,
    )

    residual_bytes = ("\n".join(result.csv_rows()) + "\n").encode("utf-8")
    weights_doc = {
        "config": config.as_dict(),
        "model_ids": model_ids,
        "interval_level": config.interval_level,
        "segments": {
            seg: {
                str(h): {
                    "weights": cell.weights,
                    "wmape": cell.wmape,
                    "n_rows": cell.n_rows,
                }
                for h, cell in sorted(cells.items())
            }
            for seg, cells in sorted(weight_book.items())
        },
        "calibration": {
            seg: {
                str(h): {
                    "lower_offset": cal.lower_offset,
                    "upper_offset": cal.upper_offset,
                    "n_residuals": cal.n_residuals,
                    "pooled": cal.pooled,
                }
                for h, cal in sorted(cals.items())
            }
            for seg, cals in sorted(calibration.items())
        },
        "summary": {
            "n_records": len(result.records),
            "n_skips": len(result.skips),
            "leakage_violations": leakage,
            "origins": [str(timeline_start.plus(o - 1)) for o in plan.origins],
        },
    }
    forecasts_doc = {
        "dataset_id": ds,
        "origin": str(timeline_end),
        "interval_level": config.interval_level,
        "rows": forecast_rows,
    }

    residuals_run = store.persist_artifact(
        ds, config_hash, "residuals", residual_bytes
    )
    weights_run = store.persist_artifact(
        ds, config_hash, "weights", canonical_json(weights_doc)
    )
    forecasts_run = store.persist_artifact(
        ds, config_hash, "forecasts", canonical_json(forecasts_doc)
    )
    return PipelineResult(
        dataset_id=ds,
        config_hash=config_hash,
        residuals_run_id=residuals_run,
        weights_run_id=weights_run,
        forecasts_run_id=forecasts_run,
        n_records=len(result.records),
        n_skips=len(result.skips),
        leakage_violations=leakage,
        reused=False,
    )


def _forward_forecasts(
    series_map, frames_by_country, segments, specs, config,
    weight_book, calibration, origin,
) -> list[dict]:
    steps = list(config.horizons)
    keys = sorted(series_map)
    local_specs = [s for s in specs if not s.is_global]
    global_specs = [s for s in specs if s.is_global]

    members_by_key: dict[SeriesKey, dict] = {k: {} for k in keys}
    for spec in local_specs:
        for key in keys:
            frames = frames_by_country.get(key.country, [])
            try:
                members_by_key[key][spec.model_id] = local_forecast(
                    spec, series_map[key], frames, steps
                )
            except ValueError:
                continue
    for spec in global_specs:
        if spec.model_id == "gbt":
            inputs = [
                GbtSeriesInput(
                    key,
                    series_map[key],
                    frames_by_country.get(key.country, []),
                    cluster_id=segments[key].cluster_id,
                    price_band_ordinal=PRICE_BAND_ORDINAL[
                        segments[key].price_band
                    ],
                )
                for key in keys
            ]
        else:
            inputs = [
                MlpSeriesInput(
                    key, series_map[key], frames_by_country.get(key.country, [])
                )
                for key in keys
            ]
        try:
            model = build_global(spec, steps).fit(inputs)
        except ValueError:
            continue
        for key in keys:
            if model.can_forecast(key):
                members_by_key[key][spec.model_id] = model.forecast_steps(key)

    rows = []
    for key in keys:
        members = members_by_key[key]
        if not members:
            continue
        seg = pattern_of(segments[key])
        cells = weight_book.get(seg, {})
        present = set(members)
        weights_by_horizon = {}
        for h in steps:
            cell = cells.get(h)
            base = cell.weights if cell is not None else {}
            weights_by_horizon[h] = _restrict_weights(base, present)
        fs = combine(members, weights_by_horizon, config.interval_level)
        fs = apply_calibration(fs, calibration.get(seg, {}))
        for p in fs.points:
            rows.append(
                {
                    "country": key.country,
                    "part": key.part,
                    "segment": seg,
                    "horizon": p.horizon,
                    "period": str(origin.plus(p.horizon)),
                    "forecast": p.point,
                    "lower": p.lower,
                    "upper": p.upper,
                }
            )
    return rows


def insample_snaive_records(
    series_map: dict[SeriesKey, DemandSeries],
) -> list[tuple[SeriesKey, PeriodId, float, float]]:
    """(key, period, actual, seasonal-naive forecast) rows for every month
    with a year-ago observation.

    These in-sample one-step errors give each month of the history an
    accuracy reading, which is what the monthly metric trajectories are
    built from; the rolling-origin backtest only covers trailing origins.
    """
    rows = []
    for key in sorted(series_map):
        series = series_map[key]
        obs = series.observations
        for i in range(12, len(obs)):
            rows.append(
                (key, obs[i].period, obs[i].actuals, obs[i - 12].actuals)
            )
    return rows
