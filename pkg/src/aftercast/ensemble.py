"""Ensemble layer: simplex weight learning, combination, interval
calibration from backtest residuals, and drift monitoring.

WMAPE is piecewise-linear in the weights, so small model counts are solved
by exhaustive simplex grid search (step 0.01 up to 3 models, 0.05 at 4);
larger sets use projected subgradient descent polished by a local pairwise
search, with every vertex also evaluated. Ties break toward the single
best model, then the lexicographically smaller model id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ForecastPoint, ForecastSet

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class EnsembleWeights:
    segment_id: str
    horizon: int
    weights: dict[str, float]
    n_rows: int
    wmape: float

    def __post_init__(self):
        total = sum(self.weights.values())
        if any(w < -WEIGHT_TOL for w in self.weights.values()):
            raise ValueError("weights must be non-negative")
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1, got {total}")


@dataclass(frozen=True)
class IntervalCalibration:
    segment_id: str
    horizon: int
    level: float
    lower_offset: float
    upper_offset: float
    n_residuals: int
    pooled: bool = False

    def __post_init__(self):
        if not (self.lower_offset <= 0.0 <= self.upper_offset):
            raise ValueError("offsets must straddle 0")


@dataclass(frozen=True)
class DriftResult:
    flagged: bool
    statistic: float
    recent_mean: float
    reference_mean: float


def _wmape_matrix(
    actuals: np.ndarray, forecasts: np.ndarray, W: np.ndarray
) -> np.ndarray:
    """WMAPE of each weight row in W. Zero-actual total falls back to the
    absolute-error numerator."""
    combined = forecasts @ W.T  # (n_rows, n_candidates)
    num = np.abs(actuals[:, None] - combined).sum(axis=0)
    den = actuals.sum()
    return num / den if den > 0 else num


def _simplex_grid(k: int, step: float) -> np.ndarray:
    units = round(1.0 / step)
    out: list[tuple[int, ...]] = []

    def rec(remaining: int, parts: int, acc: tuple[int, ...]):
        if parts == 1:
            out.append(acc + (remaining,))
            return
        for head in range(remaining + 1):
            rec(remaining - head, parts - 1, acc + (head,))

    rec(units, k, ())
    return np.asarray(out, dtype=float) / units


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sorted cumsum)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - css) / np.arange(1, len(v) + 1) > 0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def _subgradient_solve(
    actuals: np.ndarray, forecasts: np.ndarray, iters: int = 500
) -> np.ndarray:
    k = forecasts.shape[1]
    den = actuals.sum()
    scale = den if den > 0 else 1.0
    w = np.full(k, 1.0 / k)
    best_w = w.copy()
    best_loss = float(_wmape_matrix(actuals, forecasts, w[None, :])[0])
    for t in range(1, iters + 1):
        combined = forecasts @ w
        g = (np.sign(combined - actuals) @ forecasts) / scale
        w = project_to_simplex(w - 0.1 / math.sqrt(t) * g)
        loss = float(_wmape_matrix(actuals, forecasts, w[None, :])[0])
        if loss < best_loss - 1e-15:
            best_loss = loss
            best_w = w.copy()
    return best_w


def _pairwise_polish(
    actuals: np.ndarray,
    forecasts: np.ndarray,
    w: np.ndarray,
    delta: float = 0.01,
    max_passes: int = 200,
) -> np.ndarray:
    k = len(w)
    best = w.copy()
    best_loss = float(_wmape_matrix(actuals, forecasts, best[None, :])[0])
    for _ in range(max_passes):
        improved = False
        for i in range(k):
            if best[i] < delta - 1e-12:
                continue
            for j in range(k):
                if i == j:
                    continue
                trial = best.copy()
                trial[i] -= delta
                trial[j] += delta
                loss = float(
                    _wmape_matrix(actuals, forecasts, trial[None, :])[0]
                )
                if loss < best_loss - 1e-15:
                    best, best_loss = trial, loss
                    improved = True
        if not improved:
            break
    return best


def learn_weights(
    rows: list[tuple[float, dict[str, float]]],
    model_ids: list[str],
    segment_id: str = "all",
    horizon: int = 1,
) -> EnsembleWeights:
    """Learn simplex weights minimizing WMAPE over validation rows.

    Rows are (actual, forecasts-by-model); only complete cases (every
    model present) enter the optimization. Models with no surviving rows
    cause an error.
    """
    ids = sorted(model_ids)
    complete = [
        (a, [f[m] for m in ids]) for a, f in rows if all(m in f for m in ids)
    ]
    if not complete:
        raise ValueError("no complete validation rows for weight learning")
    actuals = np.asarray([a for a, _ in complete])
    forecasts = np.asarray([f for _, f in complete])
    k = len(ids)

    candidates: list[np.ndarray]
    if k == 1:
        candidates = [np.ones(1)]
    elif k <= 3:
        candidates = [_simplex_grid(k, 0.01)]
    elif k == 4:
        candidates = [_simplex_grid(k, 0.05), np.eye(k)]
    else:
        start = _subgradient_solve(actuals, forecasts)
        polished = _pairwise_polish(actuals, forecasts, start)
        candidates = [polished[None, :], np.eye(k), np.full((1, k), 1.0 / k)]

    W = np.vstack(candidates)
    losses = _wmape_matrix(actuals, forecasts, W)
    best_idx = int(np.argmin(losses))
    best_loss = float(losses[best_idx])
    best_w = W[best_idx]

    # Ties go to a single-model vertex; among tied vertices the
    # lexicographically smaller model id wins (ids sorted, argmin is first).
    vertex_losses = _wmape_matrix(actuals, forecasts, np.eye(k))
    v_min = float(vertex_losses.min())
    if v_min <= best_loss + 1e-12:
        j = int(np.argmax(vertex_losses <= v_min + 1e-12))
        best_w = np.eye(k)[j]
        best_loss = float(vertex_losses[j])

    best_w = np.maximum(best_w, 0.0)
    best_w = best_w / best_w.sum()
    return EnsembleWeights(
        segment_id=segment_id,
        horizon=horizon,
        weights={m: float(w) for m, w in zip(ids, best_w)},
        n_rows=len(complete),
        wmape=best_loss,
    )


def combine(
    members: dict[str, ForecastSet],
    weights_by_horizon: dict[int, dict[str, float]],
    interval_level: float = 0.8,
) -> ForecastSet:
    """Convex combination of member point forecasts, clamped at 0."""
    if not members:
        raise ValueError("no member forecasts")
    first = next(iter(members.values()))
    for fs in members.values():
        if fs.key != first.key or fs.origin != first.origin:
            raise ValueError("member forecasts must share key and origin")
    points = []
    for horizon, weights in sorted(weights_by_horizon.items()):
        value = 0.0
        for model_id, w in weights.items():
            if w <= 0.0:
                continue
            if model_id not in members:
                raise ValueError(
                    f"missing member forecast {model_id!r} with weight {w}"
                )
            value += w * members[model_id].point_at(horizon).point
        value = max(0.0, value)
        points.append(
            ForecastPoint(
                horizon=horizon,
                point=value,
                lower=value,
                upper=value,
                interval_level=interval_level,
            )
        )
    return ForecastSet(first.key, first.origin, tuple(points), "ensemble")


def calibrate_intervals(
    residuals_by_horizon: dict[int, list[float]],
    segment_id: str = "all",
    level: float = 0.8,
    min_residuals: int = 20,
) -> dict[int, IntervalCalibration]:
    """Residual-quantile offsets per horizon.

    Horizons with fewer than min_residuals residuals fall back to the pool
    of all horizons in the segment. Offsets are clamped to straddle zero so
    intervals always contain the point forecast.
    """
    pooled = [r for rs in residuals_by_horizon.values() for r in rs]
    if not pooled:
        raise ValueError("no residuals to calibrate from")
    out: dict[int, IntervalCalibration] = {}
    for horizon, rs in sorted(residuals_by_horizon.items()):
        use_pool = len(rs) < min_residuals
        sample = pooled if use_pool else rs
        lo = float(np.quantile(sample, (1.0 - level) / 2.0))
        up = float(np.quantile(sample, (1.0 + level) / 2.0))
        out[horizon] = IntervalCalibration(
            segment_id=segment_id,
            horizon=horizon,
            level=level,
            lower_offset=min(0.0, lo),
            upper_offset=max(0.0, up),
            n_residuals=len(sample),
            pooled=use_pool,
        )
    return out


def apply_calibration(
    fs: ForecastSet, calibration: dict[int, IntervalCalibration]
) -> ForecastSet:
    """Widen degenerate intervals using per-horizon offsets."""
    points = []
    for p in fs.points:
        cal = calibration.get(p.horizon)
        if cal is None:
            points.append(p)
            continue
        points.append(
            ForecastPoint(
                horizon=p.horizon,
                point=p.point,
                lower=max(0.0, p.point + cal.lower_offset),
                upper=p.point + cal.upper_offset,
                interval_level=cal.level,
            )
        )
    return ForecastSet(fs.key, fs.origin, tuple(points), fs.model_id)


def drift_check(
    recent: list[float], reference: list[float]
) -> DriftResult:
    """Two-sigma mean-shift rule: flag when
    |mean(recent) - mean(ref)| > 2 * sigma_ref / sqrt(n_recent)."""
    if len(recent) < 6 or len(reference) < 6:
        raise ValueError("both windows need at least 6 observations")
    recent_mean = float(np.mean(recent))
    ref_mean = float(np.mean(reference))
    sigma = float(np.std(reference, ddof=1))
    shift = abs(recent_mean - ref_mean)
    if sigma == 0.0:
        statistic = 0.0 if shift == 0.0 else math.inf
    else:
        statistic = shift / (sigma / math.sqrt(len(recent)))
    return DriftResult(
        flagged=statistic > 2.0,
        statistic=statistic,
        recent_mean=recent_mean,
        reference_mean=ref_mean,
    )
