"""Rolling-origin backtesting with latency gaps and a leakage audit trail.

Origins are training-cutoff positions on the dataset timeline. For an
origin o with gap g, horizon h evaluates the period o + g + h; every model
is refit on data at or before o only. Model failures on a series become
skip records, never run failures. Every fit logs the latest period it saw,
so a leakage audit can assert nothing trained on post-origin data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import DemandSeries, ExogenousFrame, PeriodId, SeriesKey
from .models.gbt import GbtSeriesInput
from .models.mlp import MlpSeriesInput
from .models.registry import ModelSpec, build_global, local_forecast
from .segmentation import PRICE_BAND_ORDINAL, SegmentAssignment


@dataclass(frozen=True)
class RollingOriginPlan:
    """Origins are 1-based month positions into the dataset timeline."""

    origins: tuple[int, ...]
    gap: int
    horizons: tuple[int, ...]
    min_train_length: int

    def __post_init__(self):
        if list(self.origins) != sorted(set(self.origins)):
            raise ValueError("origins must be ascending and distinct")
        if self.gap < 0:
            raise ValueError("gap must be >= 0")
        hs = list(self.horizons)
        if not hs or hs != sorted(set(hs)) or hs[0] < 1:
            raise ValueError("horizons must be distinct ascending positives")

    @property
    def max_horizon(self) -> int:
        return self.horizons[-1]

    @property
    def steps(self) -> list[int]:
        """Steps ahead of the origin that models must produce."""
        return [self.gap + h for h in self.horizons]


def make_plan(
    history_length: int,
    n_origins: int,
    gap: int,
    horizons: list[int],
    min_train_length: int,
) -> RollingOriginPlan:
    """Choose the last n_origins feasible training cutoffs, stepping by 1.

    An origin o (1-based) is feasible when o >= min_train_length and
    o + gap + max(horizons) <= history_length.
    """
    if n_origins < 1:
        raise ValueError("n_origins must be >= 1")
    max_h = max(horizons)
    last = history_length - gap - max_h
    feasible = [o for o in range(min_train_length, last + 1)]
    if not feasible:
        raise ValueError(
            f"infeasible plan: no origin satisfies min_train="
            f"{min_train_length} and gap+max_h={gap + max_h} "
            f"within {history_length} months"
        )
    return RollingOriginPlan(
        origins=tuple(feasible[-n_origins:]),
        gap=gap,
        horizons=tuple(sorted(set(int(h) for h in horizons))),
        min_train_length=min_train_length,
    )


@dataclass(frozen=True)
class BacktestRecord:
    key: SeriesKey
    model_id: str
    origin: PeriodId
    horizon: int
    actual: float
    forecast: float

    @property
    def error(self) -> float:
        return self.actual - self.forecast


@dataclass(frozen=True)
class SkipRecord:
    key: SeriesKey
    model_id: str
    origin: PeriodId
    reason: str


@dataclass(frozen=True)
class FitAudit:
    """Latest training period observed by one fit (leakage instrumentation)."""

    model_id: str
    origin: PeriodId
    key: SeriesKey | None  # None for global (pooled) fits
    max_train_period: PeriodId


@dataclass
class BacktestResult:
    records: list[BacktestRecord] = field(default_factory=list)
    skips: list[SkipRecord] = field(default_factory=list)
    audits: list[FitAudit] = field(default_factory=list)

    def sorted_records(self) -> list[BacktestRecord]:
        return sorted(
            self.records,
            key=lambda r: (r.key, r.model_id, r.origin, r.horizon),
        )

    def csv_rows(self) -> list[str]:
        rows = ["country,part,model_id,origin,horizon,actual,forecast,error"]
        for r in self.sorted_records():
            rows.append(
                f"{r.key.country},{r.key.part},{r.model_id},{r.origin},"
                f"{r.horizon},{r.actual:.6f},{r.forecast:.6f},{r.error:.6f}"
            )
        return rows

    def leakage_violations(self) -> list[FitAudit]:
        return [a for a in self.audits if a.max_train_period > a.origin]


def _truncate_frames(
    frames: list[ExogenousFrame], through: PeriodId
) -> list[ExogenousFrame]:
    return [f for f in frames if f.period <= through]


def run_backtest(
    series_map: dict[SeriesKey, DemandSeries],
    frames_by_country: dict[str, list[ExogenousFrame]],
    plan: RollingOriginPlan,
    specs: list[ModelSpec],
    segments: dict[SeriesKey, SegmentAssignment],
    timeline_start: PeriodId,
) -> BacktestResult:
    """Refit every model at every origin and score gap-shifted horizons."""
    result = BacktestResult()
    local_specs = [s for s in specs if not s.is_global]
    global_specs = [s for s in specs if s.is_global]
    steps = plan.steps

    for origin_pos in plan.origins:
        origin = timeline_start.plus(origin_pos - 1)

        train: dict[SeriesKey, DemandSeries] = {}
        for key, series in series_map.items():
            if series.observations[0].period > origin:
                for spec in specs:
                    result.skips.append(
                        SkipRecord(key, spec.model_id, origin, "no history at origin")
                    )
                continue
            train[key] = series.truncate(origin)

        def frames_for(key: SeriesKey) -> list[ExogenousFrame]:
            return _truncate_frames(
                frames_by_country.get(key.country, []), origin
            )

        def record_scores(key: SeriesKey, model_id: str, forecast_set) -> None:
            full = series_map[key]
            by_period = {o.period: o.actuals for o in full.observations}
            for h in plan.horizons:
                target = origin.plus(plan.gap + h)
                actual = by_period.get(target)
                if actual is None:
                    continue
                point = forecast_set.point_at(plan.gap + h)
                result.records.append(
                    BacktestRecord(key, model_id, origin, h, actual, point.point)
                )

        for spec in local_specs:
            for key in sorted(train):
                series = train[key]
                try:
                    fs = local_forecast(spec, series, frames_for(key), steps)
                except ValueError as exc:
                    result.skips.append(
                        SkipRecord(key, spec.model_id, origin, str(exc))
                    )
                    continue
                result.audits.append(
                    FitAudit(spec.model_id, origin, key, series.last_period)
                )
                record_scores(key, spec.model_id, fs)

        for spec in global_specs:
            keys = sorted(train)
            if spec.model_id == "gbt":
                inputs = [
                    GbtSeriesInput(
                        key,
                        train[key],
                        frames_for(key),
                        cluster_id=segments[key].cluster_id if key in segments else 0,
                        price_band_ordinal=PRICE_BAND_ORDINAL[
                            segments[key].price_band
                        ]
                        if key in segments
                        else 1,
                    )
                    for key in keys
                ]
            else:
                inputs = [
                    MlpSeriesInput(key, train[key], frames_for(key))
                    for key in keys
                ]
            try:
                model = build_global(spec, steps).fit(inputs)
            except ValueError as exc:
                for key in keys:
                    result.skips.append(
                        SkipRecord(key, spec.model_id, origin, str(exc))
                    )
                continue
            max_train = max(train[key].last_period for key in keys)
            result.audits.append(
                FitAudit(spec.model_id, origin, None, max_train)
            )
            for key in keys:
                if not model.can_forecast(key):
                    result.skips.append(
                        SkipRecord(key, spec.model_id, origin, "series too short")
                    )
                    continue
                record_scores(key, spec.model_id, model.forecast_steps(key))

    return result
