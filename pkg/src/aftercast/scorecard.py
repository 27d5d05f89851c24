"""Scorecard analytics over backtested (actual, forecast, revenue) records.

All error metrics are expressed in percent. MAPE averages per-record APEs
and is undefined (None) when no record has a positive actual; WMAPE keeps
zero-actual rows in both numerator and denominator and is undefined only
when actuals sum to zero. Band edges are left-closed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BAND_LABELS = ("<10%", "10-20%", "20-40%", ">40%")
BAND_EDGES = (10.0, 20.0, 40.0)


@dataclass(frozen=True)
class PointMetrics:
    mape: float | None
    wmape: float | None
    bias_pct: float | None
    over_pct: float | None
    under_pct: float | None
    percentiles: dict[str, float]
    coverage: float
    n_records: int


@dataclass(frozen=True)
class MetricRow:
    entity_id: str
    mape: float | None
    wmape: float | None
    bias_pct: float | None
    revenue: float
    coverage: float
    n_records: int

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")


@dataclass(frozen=True)
class BandDistribution:
    shares: dict[str, float]
    denominator_count: int
    coverage_note: float

    def __post_init__(self):
        if self.denominator_count > 0:
            total = sum(self.shares.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"band shares must sum to 1, got {total}")


def point_metrics(records: list[tuple[float, float, float]]) -> PointMetrics:
    """Aggregate error metrics over (actual, forecast, revenue) records."""
    if not records:
        raise ValueError("point_metrics needs at least one record")
    actuals = np.asarray([r[0] for r in records], dtype=float)
    forecasts = np.asarray([r[1] for r in records], dtype=float)
    abs_err = np.abs(actuals - forecasts)
    signed = forecasts - actuals

    positive = actuals > 0
    coverage = float(positive.mean())
    mape = (
        float((abs_err[positive] / actuals[positive]).mean() * 100.0)
        if positive.any()
        else None
    )

    denom = float(actuals.sum())
    if denom > 0:
        wmape = float(abs_err.sum() / denom * 100.0)
        bias = float(signed.sum() / denom * 100.0)
        over = float(signed[signed > 0].sum() / denom * 100.0)
        under = float(-signed[signed < 0].sum() / denom * 100.0)
    else:
        wmape = bias = over = under = None

    p50, p90, p95 = np.percentile(abs_err, [50, 90, 95])
    return PointMetrics(
        mape=mape,
        wmape=wmape,
        bias_pct=bias,
        over_pct=over,
        under_pct=under,
        percentiles={"P50": float(p50), "P90": float(p90), "P95": float(p95)},
        coverage=coverage,
        n_records=len(records),
    )


def metric_rows(
    records_by_entity: dict[str, list[tuple[float, float, float]]]
) -> list[MetricRow]:
    rows = []
    for entity_id in sorted(records_by_entity):
        records = records_by_entity[entity_id]
        pm = point_metrics(records)
        rows.append(
            MetricRow(
                entity_id=entity_id,
                mape=pm.mape,
                wmape=pm.wmape,
                bias_pct=pm.bias_pct,
                revenue=float(sum(r[2] for r in records)),
                coverage=pm.coverage,
                n_records=pm.n_records,
            )
        )
    return rows


def tolerance_shares(
    rows: list[MetricRow], deviation_pct: float
) -> tuple[float, float]:
    """Share of entities (by count and by revenue) with WMAPE within
    deviation_pct. Undefined WMAPE counts as outside tolerance."""
    if not rows:
        raise ValueError("tolerance_shares needs at least one entity")
    within = [r.wmape is not None and r.wmape <= deviation_pct for r in rows]
    share_count = sum(within) / len(rows)
    total_rev = sum(r.revenue for r in rows)
    if total_rev > 0:
        share_rev = (
            sum(r.revenue for r, ok in zip(rows, within) if ok) / total_rev
        )
    else:
        share_rev = share_count
    return share_count, share_rev


def band_of(mape: float) -> str:
    for label, edge in zip(BAND_LABELS, BAND_EDGES):
        if mape < edge:
            return label
    return BAND_LABELS[-1]


def band_distribution(mapes: list[float | None]) -> BandDistribution:
    """Band shares over entities with defined MAPE; undefined entities
    appear only in the coverage note."""
    defined = [m for m in mapes if m is not None]
    counts = {label: 0 for label in BAND_LABELS}
    for m in defined:
        counts[band_of(m)] += 1
    n = len(defined)
    shares = {
        label: (counts[label] / n if n else 0.0) for label in BAND_LABELS
    }
    coverage = n / len(mapes) if mapes else 0.0
    return BandDistribution(
        shares=shares, denominator_count=n, coverage_note=coverage
    )


def band_distributions_by(
    rows: list[MetricRow], group_of
) -> dict[str, BandDistribution]:
    grouped: dict[str, list[float | None]] = {}
    for row in rows:
        grouped.setdefault(group_of(row), []).append(row.mape)
    return {g: band_distribution(ms) for g, ms in sorted(grouped.items())}


@dataclass(frozen=True)
class GroupStats:
    entity_id: str
    mean_mape: float | None
    median_mape: float | None
    revw_mape: float | None
    revenue: float
    n_members: int


def group_stats(
    member_rows: list[MetricRow], group_of
) -> list[GroupStats]:
    """Mean, median and revenue-weighted MAPE per group of member rows."""
    grouped: dict[str, list[MetricRow]] = {}
    for row in member_rows:
        grouped.setdefault(group_of(row), []).append(row)
    out = []
    for gid in sorted(grouped):
        members = grouped[gid]
        defined = [m for m in members if m.mape is not None]
        mapes = [m.mape for m in defined]
        revs = [m.revenue for m in defined]
        if mapes:
            mean_m = float(np.mean(mapes))
            median_m = float(np.median(mapes))
            wsum = sum(revs)
            revw = (
                float(sum(r * m for r, m in zip(revs, mapes)) / wsum)
                if wsum > 0
                else mean_m
            )
        else:
            mean_m = median_m = revw = None
        out.append(
            GroupStats(
                entity_id=gid,
                mean_mape=mean_m,
                median_mape=median_m,
                revw_mape=revw,
                revenue=float(sum(m.revenue for m in members)),
                n_members=len(members),
            )
        )
    return out


def entity_rankings(
    rows: list[MetricRow], n: int, by: str = "wmape"
) -> dict[str, list[MetricRow]]:
    """Best (ascending error) and worst (descending) top-n tables.

    Rows without a defined value for the ranking metric are left out;
    ties break on entity id ascending.
    """
    ranked = [r for r in rows if getattr(r, by) is not None]
    ascending = sorted(ranked, key=lambda r: (getattr(r, by), r.entity_id))
    descending = sorted(
        ranked, key=lambda r: (-getattr(r, by), r.entity_id)
    )
    return {"top": ascending[:n], "bottom": descending[:n]}


def flag_risk_win(
    rows: list[MetricRow],
    revenue_threshold_pctile: float = 80.0,
    mape_threshold: float = 20.0,
) -> tuple[list[MetricRow], list[MetricRow]]:
    """High-revenue outliers: risk (mape above threshold) and wins
    (at or below), both restricted to the top revenue percentile and
    sorted by revenue descending."""
    if not rows:
        return [], []
    gate = float(
        np.percentile([r.revenue for r in rows], revenue_threshold_pctile)
    )
    eligible = [
        r for r in rows if r.revenue >= gate and r.mape is not None
    ]
    risk = [r for r in eligible if r.mape > mape_threshold]
    win = [r for r in eligible if r.mape <= mape_threshold]
    by_revenue = lambda r: (-r.revenue, r.entity_id)  # noqa: E731
    return sorted(risk, key=by_revenue), sorted(win, key=by_revenue)


@dataclass(frozen=True)
class RevenueBin:
    lower: float
    upper: float
    avg_mape: float | None
    material_count: int


@dataclass(frozen=True)
class BinDeviation:
    country: str
    bin_index: int
    deviation: float
    low_support: bool


def revenue_bin_analysis(
    rows: list[MetricRow],
    bin_edges: list[float],
    country_of=None,
) -> tuple[list[RevenueBin], list[BinDeviation]]:
    """Average MAPE per revenue bin, plus per-country deviations from the
    overall bin averages. Bins are [edge_i, edge_i+1), the last closed at
    +inf; edges must cover every revenue."""
    edges = list(bin_edges)
    if edges[-1] != float("inf"):
        edges = edges + [float("inf")]
    if rows and min(r.revenue for r in rows) < edges[0]:
        raise ValueError("bin edges do not cover all revenues")

    def bin_index(revenue: float) -> int:
        for i in range(len(edges) - 1):
            if edges[i] <= revenue < edges[i + 1]:
                return i
        return len(edges) - 2

    assigned: dict[int, list[MetricRow]] = {i: [] for i in range(len(edges) - 1)}
    for r in rows:
        assigned[bin_index(r.revenue)].append(r)

    bins = []
    for i in range(len(edges) - 1):
        members = assigned[i]
        defined = [m.mape for m in members if m.mape is not None]
        bins.append(
            RevenueBin(
                lower=edges[i],
                upper=edges[i + 1],
                avg_mape=float(np.mean(defined)) if defined else None,
                material_count=len(members),
            )
        )

    deviations: list[BinDeviation] = []
    if country_of is not None:
        by_country: dict[str, dict[int, list[MetricRow]]] = {}
        for r in rows:
            by_country.setdefault(country_of(r), {}).setdefault(
                bin_index(r.revenue), []
            ).append(r)
        for country in sorted(by_country):
            for i, overall in enumerate(bins):
                members = by_country[country].get(i, [])
                defined = [m.mape for m in members if m.mape is not None]
                if not defined or overall.avg_mape is None:
                    continue  # empty on either side: nothing to compare
                deviations.append(
                    BinDeviation(
                        country=country,
                        bin_index=i,
                        deviation=float(np.mean(defined)) - overall.avg_mape,
                        low_support=len(members) < 3,
                    )
                )
    return bins, deviations


@dataclass(frozen=True)
class FilteredSummary:
    primary: PointMetrics | None
    context: PointMetrics
    primary_empty: bool
    n_included: int
    n_total: int


def default_filter(records: list[tuple[float, float, float]]) -> bool:
    """Keep materials with >= 6 evaluated months and coverage >= 0.5."""
    if len(records) < 6:
        return False
    coverage = sum(1 for a, _, _ in records if a > 0) / len(records)
    return coverage >= 0.5


def filtered_summary(
    records_by_entity: dict[str, list[tuple[float, float, float]]],
    predicate=None,
) -> FilteredSummary:
    """Paired summaries: the filtered view is primary, all items context."""
    if predicate is None:
        predicate = default_filter
    all_records = [r for rs in records_by_entity.values() for r in rs]
    kept = {e: rs for e, rs in records_by_entity.items() if predicate(rs)}
    kept_records = [r for rs in kept.values() for r in rs]
    return FilteredSummary(
        primary=point_metrics(kept_records) if kept_records else None,
        context=point_metrics(all_records),
        primary_empty=not kept_records,
        n_included=len(kept),
        n_total=len(records_by_entity),
    )
