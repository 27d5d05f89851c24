"""Trend analytics: mix/concentration diagnostics, month-over-month
decomposition with exact reconciliation, momentum alerts, and metric
trajectory classification with change points and regime attribution.

Reconciliation proofs run in Decimal so contribution sums equal totals
exactly, never within a tolerance. Change points come from binary
segmentation on mean shift with a global penalty of twice the series
variance; ties break leftmost.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import ExogenousFrame, PeriodId
from .scorecard import BandDistribution, band_distribution

TREND_METRICS = ("mape", "wmape", "bias")
UNATTRIBUTED = "unattributed (possible model drift)"
SLOPE_FLOOR = 0.5  # percentage points per month


# -- mix and value signals ----------------------------------------------------


@dataclass(frozen=True)
class ShareRow:
    entity_id: str
    a_total: float
    r_total: float
    share_a: float
    share_r: float
    asp: float | None
    prem_disc: float

    def __post_init__(self):
        if (self.asp is None) != (self.a_total == 0):
            raise ValueError("asp must be undefined exactly when A = 0")


@dataclass(frozen=True)
class AspSummary:
    mean: float | None
    median: float | None
    low: float | None
    high: float | None
    coverage: float
    winsor_bounds: tuple[float, float] | None


def value_signals(
    totals: dict[str, tuple[float, float]]
) -> tuple[list[ShareRow], AspSummary]:
    """Share, ASP and premium/discount per entity from (units, revenue)
    totals, plus a winsorized ASP summary (1st/99th percentile bounds)."""
    if not totals:
        raise ValueError("value_signals needs at least one entity")
    sum_a = sum(a for a, _ in totals.values())
    sum_r = sum(r for _, r in totals.values())
    if sum_a <= 0 or sum_r <= 0:
        raise ValueError("dataset totals must be positive")
    rows = []
    for entity_id in sorted(totals):
        a, r = totals[entity_id]
        share_a = a / sum_a
        share_r = r / sum_r
        rows.append(
            ShareRow(
                entity_id=entity_id,
                a_total=float(a),
                r_total=float(r),
                share_a=share_a,
                share_r=share_r,
                asp=(r / a) if a > 0 else None,
                prem_disc=share_r - share_a,
            )
        )
    defined = np.array([row.asp for row in rows if row.asp is not None])
    coverage = len(defined) / len(rows)
    if len(defined) == 0:
        summary = AspSummary(None, None, None, None, 0.0, None)
    else:
        lo, hi = np.percentile(defined, [1, 99])
        w = np.clip(defined, lo, hi)
        summary = AspSummary(
            mean=float(w.mean()),
            median=float(np.median(w)),
            low=float(w.min()),
            high=float(w.max()),
            coverage=coverage,
            winsor_bounds=(float(lo), float(hi)),
        )
    return rows, summary


@dataclass(frozen=True)
class Concentration:
    pareto: list[tuple[str, float]]  # (entity, cumulative revenue share)
    hhi: float
    top_k: dict[int, float]


def mix_concentration(rows: list[ShareRow]) -> Concentration:
    """Pareto curve, HHI and top-k revenue shares (k in {1, 3, 5})."""
    if not any(r.r_total > 0 for r in rows):
        raise ValueError("mix_concentration needs positive revenue")
    ranked = sorted(rows, key=lambda r: (-r.share_r, r.entity_id))
    cumulative = 0.0
    pareto = []
    for r in ranked:
        cumulative += r.share_r
        pareto.append((r.entity_id, cumulative))
    hhi = float(sum(r.share_r**2 for r in rows))
    top_k = {
        k: float(sum(r.share_r for r in ranked[:k])) for k in (1, 3, 5)
    }
    return Concentration(pareto=pareto, hhi=hhi, top_k=top_k)


@dataclass(frozen=True)
class IntersectionCell:
    country: str
    group: str
    revenue: float
    actuals: float
    n_materials: int
    bands: BandDistribution
    low_support: bool


def intersection_profile(
    members: list[tuple[str, str, float, float, float | None]]
) -> list[IntersectionCell]:
    """Country x material-group cells with totals and per-cell MAPE bands.

    members: (country, group, revenue, actuals, mape or None) per material.
    Cells with fewer than 3 materials are marked low-support.
    """
    cells: dict[tuple[str, str], list] = {}
    for country, group, revenue, actuals, mape in members:
        cells.setdefault((country, group), []).append((revenue, actuals, mape))
    out = []
    for (country, group) in sorted(cells):
        rows = cells[(country, group)]
        out.append(
            IntersectionCell(
                country=country,
                group=group,
                revenue=float(sum(r for r, _, _ in rows)),
                actuals=float(sum(a for _, a, _ in rows)),
                n_materials=len(rows),
                bands=band_distribution([m for _, _, m in rows]),
                low_support=len(rows) < 3,
            )
        )
    return out


# -- month over month ---------------------------------------------------------


@dataclass(frozen=True)
class MoMRow:
    entity_id: str
    current: float
    prior: float | None
    delta: float
    pct_change: float | None
    contribution_share: float | None


@dataclass(frozen=True)
class ReconProof:
    sum_of_contributions: float
    total_delta: float
    difference: float
    exact: bool


def mom_decomposition(
    current: dict[str, float], prior: dict[str, float]
) -> tuple[list[MoMRow], ReconProof]:
    """Per-entity month-over-month deltas with an exact reconciliation proof.

    pct_change is withheld (None) when the prior month is missing or
    non-positive; a missing prior still contributes its full delta against
    zero. Rows are ranked by |delta| descending, entity id on ties.
    Deltas and totals are carried as exact rationals so the proof is an
    identity, not a tolerance check.
    """
    entities = sorted(set(current) | set(prior))
    if not entities:
        raise ValueError("mom_decomposition needs at least one entity")
    rows = []
    total_frac = Fraction(0)
    for entity_id in entities:
        cur = current.get(entity_id, 0.0)
        prev = prior.get(entity_id)
        delta_frac = Fraction(cur) - Fraction(prev if prev is not None else 0.0)
        total_frac += delta_frac
        pct = (
            (cur - prev) / prev * 100.0
            if prev is not None and prev > 0
            else None
        )
        rows.append(
            (
                entity_id,
                float(cur),
                float(prev) if prev is not None else None,
                delta_frac,
                pct,
            )
        )

    out = []
    for entity_id, cur, prev, delta_frac, pct in rows:
        share = (
            float(delta_frac / total_frac) if total_frac != 0 else None
        )
        out.append(
            MoMRow(
                entity_id=entity_id,
                current=cur,
                prior=prev,
                delta=float(delta_frac),
                pct_change=pct,
                contribution_share=share,
            )
        )
    out.sort(key=lambda r: (-abs(r.delta), r.entity_id))

    # totals recomputed from the raw dicts, not the per-entity deltas
    check_frac = sum(
        (Fraction(v) for v in current.values()), Fraction(0)
    ) - sum((Fraction(v) for v in prior.values()), Fraction(0))
    difference = total_frac - check_frac
    proof = ReconProof(
        sum_of_contributions=float(total_frac),
        total_delta=float(check_frac),
        difference=float(difference),
        exact=difference == 0,
    )
    return out, proof


@dataclass(frozen=True)
class MomentumRow:
    entity_id: str
    delta_t: float
    delta_prev: float
    momentum: float


@dataclass(frozen=True)
class Alert:
    entity_id: str
    rule: str
    message: str
    value: float


def momentum_alerts(
    monthly: dict[str, list[tuple[float, float]]],
    large_ids: set[str] | None = None,
    asp_threshold: float = 0.10,
) -> tuple[list[MomentumRow], list[Alert]]:
    """Momentum and rule-based alerts from trailing (actuals, revenue) rows.

    Rules: two consecutive negative actuals deltas on a top-size-class
    entity; ASP month-over-month swing beyond asp_threshold; price/mix
    tags when revenue and actuals move in opposite directions.
    """
    large_ids = large_ids or set()
    momentum_rows = []
    alerts = []
    for entity_id in sorted(monthly):
        series = monthly[entity_id]
        if len(series) < 2:
            continue
        a = [x for x, _ in series]
        r = [x for _, x in series]
        delta_t = a[-1] - a[-2]
        rev_delta = r[-1] - r[-2]

        if len(series) >= 3:
            delta_prev = a[-2] - a[-3]
            momentum_rows.append(
                MomentumRow(
                    entity_id=entity_id,
                    delta_t=delta_t,
                    delta_prev=delta_prev,
                    momentum=delta_t - delta_prev,
                )
            )
            if entity_id in large_ids and delta_t < 0 and delta_prev < 0:
                alerts.append(
                    Alert(
                        entity_id,
                        "consecutive_decline",
                        "two consecutive negative monthly deltas",
                        delta_t + delta_prev,
                    )
                )

        asp_now = r[-1] / a[-1] if a[-1] > 0 else None
        asp_prev = r[-2] / a[-2] if a[-2] > 0 else None
        if asp_now is not None and asp_prev is not None and asp_prev > 0:
            swing = asp_now / asp_prev - 1.0
            if abs(swing) > asp_threshold:
                alerts.append(
                    Alert(
                        entity_id,
                        "asp_swing",
                        f"ASP moved {swing * 100.0:+.1f}% month over month",
                        swing,
                    )
                )

        if rev_delta > 0 and delta_t < 0:
            alerts.append(
                Alert(
                    entity_id,
                    "price_mix",
                    "price/mix tailwind",
                    rev_delta,
                )
            )
        elif delta_t > 0 and rev_delta < 0:
            alerts.append(
                Alert(entity_id, "price_mix", "price pressure", rev_delta)
            )
    return momentum_rows, alerts


# -- metric trajectories ------------------------------------------------------


def ols_slope(values: list[float]) -> tuple[float, float]:
    """(slope, standard error of slope) of values on 0..n-1."""
    y = np.asarray(values, dtype=float)
    n = len(y)
    t = np.arange(n, dtype=float)
    t_c = t - t.mean()
    denom = float((t_c**2).sum())
    slope = float((t_c * (y - y.mean())).sum() / denom)
    if n <= 2:
        return slope, 0.0
    resid = y - (y.mean() + slope * t_c)
    sigma2 = float((resid**2).sum()) / (n - 2)
    return slope, float(np.sqrt(sigma2 / denom))


def best_split(values, min_segment: int = 3) -> tuple[int, float] | None:
    """Index and squared-error reduction of the best single mean-shift
    split, leftmost on ties; None when the segment is too short."""
    seg = np.asarray(values, dtype=float)
    m = len(seg)
    if m < 2 * min_segment:
        return None
    prefix = np.cumsum(seg)
    prefix2 = np.cumsum(seg**2)
    total = prefix2[-1] - prefix[-1] ** 2 / m
    best = None
    for i in range(min_segment, m - min_segment + 1):
        left = prefix2[i - 1] - prefix[i - 1] ** 2 / i
        right = (prefix2[-1] - prefix2[i - 1]) - (
            prefix[-1] - prefix[i - 1]
        ) ** 2 / (m - i)
        reduction = total - left - right
        if best is None or reduction > best[1] + 1e-9:
            best = (i, float(reduction))
    return best


def change_points(
    values: list[float],
    min_segment: int = 3,
    penalty: float | None = None,
) -> list[int]:
    """Mean-shift change indices by binary segmentation.

    A split is accepted when its squared-error reduction exceeds the
    penalty (default: twice the population variance of the full series);
    ties resolve to the leftmost index. Series shorter than two minimum
    segments yield no change points.
    """
    y = np.asarray(values, dtype=float)
    n = len(y)
    if n < 2 * min_segment:
        return []
    if penalty is None:
        penalty = 2.0 * float(y.var())

    found: list[int] = []

    def recurse(lo: int, hi: int) -> None:
        split = best_split(y[lo:hi], min_segment)
        if split is None or split[1] <= penalty:
            return
        cut = lo + split[0]
        found.append(cut)
        recurse(lo, cut)
        recurse(cut, hi)

    recurse(0, n)
    return sorted(found)


def regime_attribution(
    points: list[PeriodId], frames: list[ExogenousFrame]
) -> list[str]:
    """Label change points near (within one month of) a regime transition.

    Equidistant transitions resolve to the earlier one; anything farther
    than a month is tagged as possible model drift.
    """
    ordered = sorted(frames, key=lambda f: f.period)
    transitions = []
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.regime != prev.regime:
            transitions.append((cur.period, cur.regime))
    labels = []
    for point in points:
        best = None
        for period, regime in transitions:
            distance = abs(point.index - period.index)
            if distance > 1:
                continue
            key = (distance, period.index)
            if best is None or key < best[0]:
                best = (key, regime)
        labels.append(best[1] if best else UNATTRIBUTED)
    return labels


@dataclass(frozen=True)
class TrendVerdict:
    entity_id: str
    metric: str
    slope: float
    classification: str
    change_points: tuple[PeriodId, ...]
    attributions: tuple[str, ...]

    def __post_init__(self):
        if self.metric not in TREND_METRICS:
            raise ValueError(f"unknown trend metric {self.metric!r}")
        if self.classification not in ("improving", "deteriorating", "stable"):
            raise ValueError(f"bad classification {self.classification!r}")


def metric_trend(
    entity_id: str,
    metric: str,
    periods: list[PeriodId],
    values: list[float],
    frames: list[ExogenousFrame] | None = None,
    min_segment: int = 3,
    penalty: float | None = None,
) -> TrendVerdict:
    """Slope, trajectory classification, and attributed change points.

    Bias is classified on |bias| so that drift away from zero in either
    direction reads as deterioration; the reported slope stays raw.
    """
    if len(values) < 3:
        raise ValueError("metric_trend needs at least 3 points")
    if len(periods) != len(values):
        raise ValueError("periods and values must align")
    slope, _ = ols_slope(values)
    classify_on = [abs(v) for v in values] if metric == "bias" else values
    c_slope, c_se = ols_slope(classify_on)
    threshold = max(SLOPE_FLOOR, 1.5 * c_se)
    if c_slope <= -threshold:
        classification = "improving"
    elif c_slope >= threshold:
        classification = "deteriorating"
    else:
        classification = "stable"
    indices = change_points(values, min_segment=min_segment, penalty=penalty)
    cps = tuple(periods[i] for i in indices)
    attributions = (
        tuple(regime_attribution(list(cps), frames)) if frames else ()
    )
    return TrendVerdict(
        entity_id=entity_id,
        metric=metric,
        slope=slope,
        classification=classification,
        change_points=cps,
        attributions=attributions,
    )
