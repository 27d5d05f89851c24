"""Statistical forecasters: seasonal naive, exponential smoothing, the
Croston family, and an autoregression with exogenous regressors.

Each function takes a series and a list of integer steps ahead (1-based
from the last observation) and returns a ForecastSet whose points carry
degenerate intervals (lower = point = upper); calibration widens them
later. All point forecasts are clamped at 0.
"""

from __future__ import annotations

import numpy as np

from ..core import (
    DemandSeries,
    ExogenousFrame,
    ForecastPoint,
    ForecastSet,
    PeriodId,
)

REGIME_DUMMIES = ("shock", "restriction", "recovery")


def _emit(series: DemandSeries, steps, values, model_id: str) -> ForecastSet:
    points = tuple(
        ForecastPoint(
            horizon=int(s),
            point=(v := max(0.0, float(value))),
            lower=v,
            upper=v,
        )
        for s, value in zip(steps, values)
    )
    return ForecastSet(series.key, series.last_period, points, model_id)


def seasonal_naive(series: DemandSeries, steps) -> ForecastSet:
    """Repeat the last 12 observed months cyclically."""
    if len(series) < 12:
        raise ValueError("seasonal naive requires at least 12 months")
    last12 = series.actuals[-12:]
    values = [last12[(s - 1) % 12] for s in steps]
    return _emit(series, steps, values, "snaive")


def exp_smoothing(
    series: DemandSeries,
    steps,
    variant: str = "level",
    alpha: float = 0.3,
    beta: float = 0.1,
    gamma: float = 0.1,
) -> ForecastSet:
    """Simple / Holt / additive-seasonal exponential smoothing.

    Initialization: level = first observation (level and trend variants),
    Holt trend = second minus first observation; the seasonal variant
    starts from the first-year mean with indices equal to first-year
    deviations from that mean.
    """
    for name, value in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if not 0.0 < value <= 1.0:
            raise ValueError(f"{name} must be in (0,1]")
    y = series.actuals
    model_id = f"ets_{variant}"

    if variant == "level":
        level = y[0]
        for value in y[1:]:
            level = alpha * value + (1 - alpha) * level
        values = [level] * len(steps)
    elif variant == "trend":
        if len(y) < 2:
            raise ValueError("trend variant requires at least 2 months")
        level, trend = y[0], y[1] - y[0]
        for value in y[1:]:
            prev = level
            level = alpha * value + (1 - alpha) * (level + trend)
            trend = beta * (level - prev) + (1 - beta) * trend
        values = [level + s * trend for s in steps]
    elif variant == "seasonal_additive":
        if len(y) < 24:
            raise ValueError("seasonal variant requires at least 24 months")
        base = float(np.mean(y[:12]))
        seasonal = [value - base for value in y[:12]]
        level = base
        for t in range(12, len(y)):
            s_old = seasonal[t % 12]
            level_prev = level
            level = alpha * (y[t] - s_old) + (1 - alpha) * level
            seasonal[t % 12] = gamma * (y[t] - level_prev) + (1 - gamma) * s_old
        n = len(y)
        values = [level + seasonal[(n + s - 1) % 12] for s in steps]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return _emit(series, steps, values, model_id)


def croston_family(
    series: DemandSeries, steps, variant: str = "croston", alpha: float = 0.1
) -> ForecastSet:
    """Croston, SBA, or TSB intermittent-demand forecast (flat across steps).

    Croston smooths non-zero sizes and inter-demand intervals with the same
    alpha, updating only on demand periods; SBA multiplies by (1 - alpha/2).
    TSB smooths the demand probability every period and the size on demand
    periods. An all-zero history is an error for croston/sba and forecasts
    0 under tsb.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0,1]")
    if variant not in ("croston", "sba", "tsb"):
        raise ValueError(f"unknown variant {variant!r}")
    y = series.actuals

    if variant == "tsb":
        head = y[: min(12, len(y))]
        prob = sum(1 for v in head if v > 0) / len(head)
        size = next((float(v) for v in y if v > 0), 0.0)
        for value in y:
            prob = alpha * (1.0 if value > 0 else 0.0) + (1 - alpha) * prob
            if value > 0:
                size = alpha * value + (1 - alpha) * size
        flat = prob * size
    else:
        z = p = None
        since = 0
        for value in y:
            since += 1
            if value > 0:
                if z is None:
                    z, p = float(value), float(since)
                else:
                    z = alpha * value + (1 - alpha) * z
                    p = alpha * since + (1 - alpha) * p
                since = 0
        if z is None:
            raise ValueError(f"{variant} requires at least one non-zero demand")
        flat = z / p
        if variant == "sba":
            flat *= 1 - alpha / 2
    return _emit(series, steps, [flat] * len(steps), f"{variant}")


def _arx_row(
    lagged: list[float], frame: ExogenousFrame, month: int
) -> list[float]:
    row = [1.0, *lagged]
    row.extend(1.0 if frame.regime == r else 0.0 for r in REGIME_DUMMIES)
    row.append(float(frame.months_since_regime_start))
    row.extend(1.0 if month == m else 0.0 for m in range(2, 13))
    return row


class ArxFit:
    """Fitted autoregression; exposes named coefficients for inspection."""

    def __init__(self, series: DemandSeries, frames, lag_order: int):
        p = lag_order
        if p < 0:
            raise ValueError("lag_order must be >= 0")
        n_regressors = 1 + p + len(REGIME_DUMMIES) + 1 + 11
        if len(series) < p + 12 + n_regressors:
            raise ValueError(
                f"need at least {p + 12 + n_regressors} months "
                f"for lag_order {p}"
            )
        self.lag_order = p
        self.series = series
        self._by_period = {f.period: f for f in frames}
        y = series.actuals
        periods = series.periods
        rows, targets = [], []
        for t in range(p, len(y)):
            lagged = [y[t - k] for k in range(1, p + 1)]
            rows.append(
                _arx_row(lagged, self.frame_at(periods[t]), periods[t].month)
            )
            targets.append(y[t])
        X = np.asarray(rows)
        self.coef, *_ = np.linalg.lstsq(X, np.asarray(targets), rcond=None)

    def frame_at(self, period: PeriodId) -> ExogenousFrame:
        got = self._by_period.get(period)
        return got if got is not None else ExogenousFrame(period=period)

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def lag_coef(self) -> list[float]:
        return [float(c) for c in self.coef[1 : 1 + self.lag_order]]

    @property
    def regime_coef(self) -> dict[str, float]:
        base = 1 + self.lag_order
        return {
            r: float(self.coef[base + i]) for i, r in enumerate(REGIME_DUMMIES)
        }

    @property
    def months_since_coef(self) -> float:
        return float(self.coef[1 + self.lag_order + len(REGIME_DUMMIES)])

    def forecast_steps(
        self, steps, future_frames: list[ExogenousFrame] | None = None
    ) -> list[float]:
        """Recursive multi-step prediction, unclamped."""
        future_by_period = {f.period: f for f in (future_frames or [])}
        history = list(self.series.actuals)
        last = self.series.last_period
        produced: dict[int, float] = {}
        for s in range(1, max(steps) + 1):
            period = last.plus(s)
            frame = future_by_period.get(period)
            if frame is None:
                known = self.frame_at(last)
                frame = ExogenousFrame(
                    period=period,
                    regime=known.regime,
                    months_since_regime_start=known.months_since_regime_start
                    + (s if known.regime != "none" else 0),
                    lifecycle=known.lifecycle,
                    holiday_count=0,
                    macro_index=known.macro_index,
                )
            lagged = [history[len(history) - k] for k in range(1, self.lag_order + 1)]
            pred = float(
                np.asarray(_arx_row(lagged, frame, period.month)) @ self.coef
            )
            history.append(pred)
            produced[s] = pred
        return [produced[s] for s in steps]


def ar_exog(
    series: DemandSeries,
    frames: list[ExogenousFrame],
    steps,
    lag_order: int = 1,
    future_frames: list[ExogenousFrame] | None = None,
) -> ForecastSet:
    """OLS autoregression with regime, regime-age, and month regressors.

    Design matrix per period t: intercept, y_{t-1..t-p}, regime one-hots,
    months_since_regime_start, 11 month dummies. Rank-deficient designs
    take the minimum-norm solution. Multi-step forecasts substitute
    predictions recursively; future frames default to a carried-forward
    copy of the last known frame.
    """
    fit = ArxFit(series, frames, lag_order)
    return _emit(series, steps, fit.forecast_steps(steps, future_frames), "arx")
