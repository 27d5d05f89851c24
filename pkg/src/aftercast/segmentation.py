"""Series segmentation: intermittency patterns, Pareto tiers, size classes,
seasonality strength, price bands, and k-means clustering of descriptors.

Pattern cutoffs follow the Syntetos-Boylan scheme: ADI >= 1.32 and
CV^2 >= 0.49 split the plane into smooth / erratic / intermittent / lumpy.
CV^2 uses population variance. All operations are pure and deterministic;
clustering is seeded with best-of-restarts selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DemandSeries, SeriesKey

ADI_CUTOFF = 1.32
CV2_CUTOFF = 0.49

PATTERNS = ("smooth", "erratic", "intermittent", "lumpy")
REVENUE_TIERS = ("high", "long_tail")
SIZE_CLASSES = ("large", "medium", "small")
PRICE_BANDS = ("low", "mid", "high")

LIFECYCLE_ORDINAL = {
    "launch": 0,
    "growth": 1,
    "mature": 2,
    "decline": 3,
    "obsolete": 4,
}
PRICE_BAND_ORDINAL = {"low": 0, "mid": 1, "high": 2}


@dataclass(frozen=True)
class IntermittencyProfile:
    adi: float
    cv2: float
    pattern: str


@dataclass(frozen=True)
class SegmentAssignment:
    key: SeriesKey
    revenue_tier: str
    size_class: str
    cluster_id: int
    adi: float
    cv2: float
    seasonality_strength: float
    price_band: str


def classify_pattern(adi: float, cv2: float) -> str:
    if adi < ADI_CUTOFF:
        return "smooth" if cv2 < CV2_CUTOFF else "erratic"
    return "intermittent" if cv2 < CV2_CUTOFF else "lumpy"


def intermittency_profile(series: DemandSeries) -> IntermittencyProfile:
    """ADI and CV^2 over the full history.

    ADI = n_periods / n_nonzero. CV^2 is the squared coefficient of
    variation of the non-zero demand sizes (population variance). An
    all-zero series gets the +inf ADI sentinel and pattern lumpy.
    """
    if len(series) < 2:
        raise ValueError("series too short for intermittency profile")
    actuals = np.asarray(series.actuals, dtype=float)
    nonzero = actuals[actuals > 0]
    if nonzero.size == 0:
        return IntermittencyProfile(math.inf, 0.0, "lumpy")
    adi = len(actuals) / nonzero.size
    mean = float(nonzero.mean())
    cv2 = float(nonzero.var()) / mean**2
    return IntermittencyProfile(adi, cv2, classify_pattern(adi, cv2))


def pareto_tiers(
    revenues: dict[SeriesKey, float], coverage: float = 0.80
) -> dict[SeriesKey, str]:
    """Split keys into the high tier covering `coverage` of revenue.

    Keys are sorted by revenue descending (ties by key ascending); the
    smallest prefix whose cumulative share reaches the coverage target is
    the high tier.
    """
    if not revenues:
        raise ValueError("revenues must be non-empty")
    if not 0.0 < coverage < 1.0:
        raise ValueError("coverage must be in (0,1)")
    ranked = sorted(revenues.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(v for _, v in ranked)
    tiers: dict[SeriesKey, str] = {}
    cumulative = 0.0
    reached = total <= 0
    for key, revenue in ranked:
        if reached:
            tiers[key] = "long_tail"
            continue
        tiers[key] = "high"
        cumulative += revenue
        if cumulative >= coverage * total - 1e-12:
            reached = True
    return tiers


def size_classes(sizes: dict[SeriesKey, float]) -> dict[SeriesKey, str]:
    """Rank by trailing size descending; top 20% large (ceiling), next 30%
    medium, rest small. Ties broken by key ascending."""
    if not sizes:
        raise ValueError("sizes must be non-empty")
    ranked = sorted(sizes.items(), key=lambda kv: (-kv[1], kv[0]))
    n = len(ranked)
    n_large = math.ceil(0.2 * n)
    n_medium = math.ceil(0.5 * n) - n_large
    out: dict[SeriesKey, str] = {}
    for i, (key, _) in enumerate(ranked):
        if i < n_large:
            out[key] = "large"
        elif i < n_large + n_medium:
            out[key] = "medium"
        else:
            out[key] = "small"
    return out


def seasonality_strength(series: DemandSeries) -> float:
    """Variance-explained by monthly seasonal means after MA detrending.

    Detrend with a centered 2x12 moving average, average the detrended
    values by calendar month, and return
    max(0, 1 - Var(residual) / Var(detrended)). Series shorter than 24
    months or with zero detrended variance score 0.
    """
    if len(series) < 24:
        return 0.0
    y = np.asarray(series.actuals, dtype=float)
    n = y.size
    # 2x12 centered MA: half weight on the outermost lags.
    weights = np.full(13, 1.0 / 12.0)
    weights[0] = weights[-1] = 1.0 / 24.0
    ma = np.convolve(y, weights, mode="valid")  # valid for t in [6, n-7]
    idx = np.arange(6, n - 6)
    detrended = y[idx] - ma
    var = float(detrended.var())
    if var == 0.0:
        return 0.0
    months = np.array([series.observations[t].period.month for t in idx])
    residual = detrended.copy()
    for m in np.unique(months):
        mask = months == m
        residual[mask] -= detrended[mask].mean()
    return max(0.0, 1.0 - float(residual.var()) / var)


def price_bands(mean_prices: dict[SeriesKey, float | None]) -> dict[SeriesKey, str]:
    """Tercile banding of dataset-wide mean prices.

    Keys without any observed price default to mid.
    """
    if not mean_prices:
        raise ValueError("mean_prices must be non-empty")
    priced = {k: v for k, v in mean_prices.items() if v is not None}
    out: dict[SeriesKey, str] = {k: "mid" for k in mean_prices}
    if not priced:
        return out
    values = np.array(sorted(priced.values()), dtype=float)
    lo, hi = np.quantile(values, [1.0 / 3.0, 2.0 / 3.0])
    for key, value in priced.items():
        if value <= lo:
            out[key] = "low"
        elif value <= hi:
            out[key] = "mid"
        else:
            out[key] = "high"
    return out


# -- k-means -----------------------------------------------------------------


def _kmeanspp_init(Z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = Z.shape[0]
    centers = np.empty((k, Z.shape[1]))
    first = int(rng.integers(n))
    centers[0] = Z[first]
    closest = ((Z - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # All remaining points coincide with a center; pick uniformly.
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=closest / total))
        centers[j] = Z[pick]
        closest = np.minimum(closest, ((Z - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(
    Z: np.ndarray, centers: np.ndarray, max_iter: int = 100
) -> tuple[np.ndarray, float, list[float]]:
    """Lloyd iterations; returns (labels, objective, objective trace)."""
    trace: list[float] = []
    labels = np.zeros(Z.shape[0], dtype=int)
    for _ in range(max_iter):
        d2 = ((Z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)  # argmin breaks ties by lowest index
        obj = float(d2[np.arange(Z.shape[0]), new_labels].sum())
        trace.append(obj)
        for j in range(centers.shape[0]):
            members = Z[new_labels == j]
            if members.size:
                centers[j] = members.mean(axis=0)
            else:
                # Re-seat an empty cluster at the worst-served point.
                worst = int(d2[np.arange(Z.shape[0]), new_labels].argmax())
                centers[j] = Z[worst]
        if (new_labels == labels).all() and len(trace) > 1:
            labels = new_labels
            break
        labels = new_labels
    return labels, trace[-1], trace


def cluster_series(
    descriptors: dict[SeriesKey, tuple[float, ...]],
    k: int,
    seed: int = 42,
    restarts: int = 50,
    max_iter: int = 100,
) -> dict[SeriesKey, int]:
    """k-means over z-scored descriptor vectors.

    k-means++ initialization, `restarts` seeded restarts, keep the lowest
    objective (ties resolved by restart order). Cluster ids are renumbered
    by first appearance in key order so output is stable across runs.
    """
    if not descriptors:
        raise ValueError("descriptors must be non-empty")
    keys = sorted(descriptors)
    if not 1 <= k <= len(keys):
        raise ValueError(f"k must be in 1..{len(keys)}, got {k}")
    X = np.array([descriptors[key] for key in keys], dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd

    rng = np.random.default_rng(seed)
    best_labels: np.ndarray | None = None
    best_obj = math.inf
    for _ in range(restarts):
        centers = _kmeanspp_init(Z, k, rng)
        labels, obj, _ = _lloyd(Z, centers.copy(), max_iter)
        if obj < best_obj - 1e-12:
            best_obj = obj
            best_labels = labels

    assert best_labels is not None
    remap: dict[int, int] = {}
    for label in best_labels:
        if int(label) not in remap:
            remap[int(label)] = len(remap)
    return {key: remap[int(label)] for key, label in zip(keys, best_labels)}
