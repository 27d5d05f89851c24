"""Deterministic reporting loop.

normalize_request turns a raw parameter map into a canonical JobSpec
(byte-identical for equivalent requests), execute_jobspec runs the
analytics for the requested report family, validate_contract re-checks
the five quality rules as data, assemble_report lays out sections and
renders role-aware narratives, and generate_report persists the artifact.

Columns that participate in exact reconciliation (month-over-month
deltas, revenue totals) are carried as decimal strings computed with
exact decimal arithmetic, so the totals-reconcile check is an identity
rather than a tolerance comparison. Everything else is a float rounded
to 4 decimals at serialization.
"""

from __future__ import annotations

import json
import math
import re
import urllib.request
from dataclasses import dataclass, field
from decimal import Decimal

from .core import PeriodId, SeriesKey
from .ingest import load_demand_csv, load_exogenous_csv
from .pipeline import build_segments, insample_snaive_records, pattern_of
from .scorecard import (
    BAND_LABELS,
    MetricRow,
    band_distribution,
    band_distributions_by,
    entity_rankings,
    flag_risk_win,
    group_stats,
    metric_rows,
    point_metrics,
    revenue_bin_analysis,
    filtered_summary,
    tolerance_shares,
)
from .segmentation import pareto_tiers
from .serialize import canonical_json, format_display, hash_bytes
from .store import ArtifactStore, NotFound
from .trend import (
    intersection_profile,
    metric_trend,
    mix_concentration,
    mom_decomposition,
    momentum_alerts,
    value_signals,
)

REPORT_FAMILIES = ("performance_scorecard", "trend_overall", "trend_monthly")
KIND_BY_FAMILY = {
    "performance_scorecard": "scorecard_report",
    "trend_overall": "trend_report",
    "trend_monthly": "monthly_trend_report",
}
ROLES = ("planner", "executive")

_FAMILY_ALIASES = {
    "scorecard": "performance_scorecard",
    "performance_scorecard": "performance_scorecard",
    "trend-overall": "trend_overall",
    "trend_overall": "trend_overall",
    "trend-monthly": "trend_monthly",
    "trend_monthly": "trend_monthly",
}
_KEY_ALIASES = {
    "family": "report_family",
    "months": "window_months",
    "deviation": "deviation_pct",
    "revenue_views": "include_revenue_views",
    "narrative": "include_narrative",
    "trend": "include_trend",
}
_FIELDS = (
    "report_family",
    "dataset_id",
    "config_hash",
    "window_months",
    "deviation_pct",
    "month",
    "countries",
    "parts",
    "include_revenue_views",
    "include_narrative",
    "include_trend",
    "role",
)

# sections dropped when the revenue-views toggle is off
_REVENUE_SECTIONS = {
    "revenue_bins", "bin_deviations", "risk", "win", "fig_pareto",
    "concentration", "asp_summary", "mom_revenue_parts",
    "mom_revenue_countries", "fig_top_movers",
}
# sections dropped when the trend toggle is off
_TREND_SECTIONS = {"verdicts", "change_points", "fig_metric_trend"}

_PART_TOKEN = re.compile(r"\b[A-Z]{2,4}-\d{4}\b")


class MissingArtifact(LookupError):
    """A report asked for run artifacts that are not in the store."""


@dataclass(frozen=True)
class JobSpec:
    report_family: str
    dataset_id: str
    config_hash: str = ""
    window_months: int = 6
    deviation_pct: float = 20.0
    month: str = ""
    countries: tuple[str, ...] = ()
    parts: tuple[str, ...] = ()
    include_revenue_views: bool = True
    include_narrative: bool = True
    include_trend: bool = True
    role: str = "planner"

    def to_dict(self) -> dict:
        return {
            "report_family": self.report_family,
            "dataset_id": self.dataset_id,
            "config_hash": self.config_hash,
            "window_months": self.window_months,
            "deviation_pct": self.deviation_pct,
            "month": self.month,
            "countries": list(self.countries),
            "parts": list(self.parts),
            "include_revenue_views": self.include_revenue_views,
            "include_narrative": self.include_narrative,
            "include_trend": self.include_trend,
            "role": self.role,
        }

    def canonical_bytes(self) -> bytes:
        return canonical_json(self.to_dict())

    def spec_hash(self) -> str:
        return hash_bytes(self.canonical_bytes())


def normalize_request(raw: dict) -> JobSpec:
    """Canonical JobSpec from a raw parameter map; idempotent."""
    if not isinstance(raw, dict):
        raise ValueError("request must be a parameter map")
    params: dict = {}
    for key, value in raw.items():
        name = _KEY_ALIASES.get(key, key)
        if name not in _FIELDS:
            raise ValueError(f"unknown parameter {key!r}")
        if name in params and params[name] != value:
            raise ValueError(f"conflicting values for {name!r}")
        params[name] = value

    family_raw = params.get("report_family")
    if family_raw in (None, ""):
        raise ValueError("missing report_family")
    family = _FAMILY_ALIASES.get(str(family_raw))
    if family is None:
        raise ValueError(
            f"report_family must be one of {REPORT_FAMILIES}, "
            f"got {family_raw!r}"
        )

    dataset_id = params.get("dataset_id")
    if not dataset_id or not isinstance(dataset_id, str):
        raise ValueError("missing dataset_id")

    config_hash = params.get("config_hash", "")
    if not isinstance(config_hash, str):
        raise ValueError("config_hash must be a string")

    window = params.get("window_months", 6)
    if isinstance(window, bool) or not isinstance(window, int):
        try:
            window = int(str(window))
        except (TypeError, ValueError):
            raise ValueError("window_months must be an integer") from None
    if not 1 <= window <= 120:
        raise ValueError(f"window_months out of range: {window}")

    deviation = params.get("deviation_pct", 20.0)
    try:
        deviation = float(deviation)
    except (TypeError, ValueError):
        raise ValueError("deviation_pct must be a number") from None
    if not 0.0 < deviation <= 100.0 or math.isnan(deviation):
        raise ValueError(f"deviation_pct out of range: {deviation}")

    month = params.get("month", "")
    if month:
        try:
            PeriodId.parse(str(month))
        except ValueError:
            raise ValueError(
                f"month must be YYYY-MM, got {month!r}"
            ) from None
        month = str(month)

    def scope(name) -> tuple[str, ...]:
        values = params.get(name, ())
        if isinstance(values, str):
            values = [v for v in values.split(",") if v]
        if not isinstance(values, (list, tuple)):
            raise ValueError(f"{name} must be a list")
        return tuple(sorted({str(v) for v in values}))

    def toggle(name) -> bool:
        value = params.get(name, True)
        if isinstance(value, bool):
            return value
        if value in (0, 1):
            return bool(value)
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ValueError(f"{name} must be a boolean")

    role = params.get("role", "planner")
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")

    return JobSpec(
        report_family=family,
        dataset_id=dataset_id,
        config_hash=config_hash,
        window_months=window,
        deviation_pct=deviation,
        month=month,
        countries=scope("countries"),
        parts=scope("parts"),
        include_revenue_views=toggle("include_revenue_views"),
        include_narrative=toggle("include_narrative"),
        include_trend=toggle("include_trend"),
        role=role,
    )


@dataclass
class Reflection:
    job: JobSpec
    kpis: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "job": self.job.to_dict(),
            "kpis": self.kpis,
            "tables": self.tables,
            "figures": self.figures,
            "violations": self.violations,
        }

    def content_hash(self) -> str:
        return hash_bytes(canonical_json(self.to_doc()))


def _table(columns: list[str], rows: list[list]) -> dict:
    return {"columns": list(columns), "rows": [list(r) for r in rows]}


def _dec(value: float) -> Decimal:
    return Decimal(repr(float(value)))


def _dstr(value: Decimal) -> str:
    return format(value, "f")


# -- dataset plumbing ---------------------------------------------------------


def _load_dataset(store: ArtifactStore, dataset_id: str):
    demand_path, exog_path = store.dataset_paths(dataset_id)
    series_map, _ = load_demand_csv(demand_path, dataset_id=dataset_id)
    exog = load_exogenous_csv(exog_path, dataset_id=dataset_id)
    return series_map, exog.frames_by_country


def _apply_scope(series_map, spec: JobSpec):
    out = {
        key: s
        for key, s in series_map.items()
        if (not spec.countries or key.country in spec.countries)
        and (not spec.parts or key.part in spec.parts)
    }
    if not out:
        raise ValueError("no entities in scope")
    return out


def _family_of(part: str) -> str:
    return part.split("-")[0]


def _window_periods(series_map, window_months: int) -> list[PeriodId]:
    end = max(s.last_period for s in series_map.values())
    return [end.plus(-i) for i in range(window_months - 1, -1, -1)]


def _fetch_run_docs(store: ArtifactStore, spec: JobSpec):
    """Residual records plus the run config for a scorecard-style read."""
    run = store.find_run(spec.dataset_id, spec.config_hash, "residuals")
    wrun = store.find_run(spec.dataset_id, spec.config_hash, "weights")
    if run is None or wrun is None:
        raise MissingArtifact(
            f"missing backtest artifact for dataset {spec.dataset_id!r} "
            f"(config {spec.config_hash[:12] or 'unset'})"
        )
    _, residual_bytes = store.fetch_artifact(run)
    _, weights_bytes = store.fetch_artifact(wrun)
    weights_doc = json.loads(weights_bytes)
    records = []
    lines = residual_bytes.decode("utf-8").strip().split("\n")
    header = lines[0].split(",")
    for line in lines[1:]:
        cells = dict(zip(header, line.split(",")))
        records.append(
            {
                "key": SeriesKey(cells["country"], cells["part"]),
                "model_id": cells["model_id"],
                "origin": PeriodId.parse(cells["origin"]),
                "horizon": int(cells["horizon"]),
                "actual": float(cells["actual"]),
                "forecast": float(cells["forecast"]),
            }
        )
    return records, weights_doc


# -- execution ----------------------------------------------------------------


def execute_jobspec(spec: JobSpec, store: ArtifactStore) -> Reflection:
    """Run the analytics for a canonical spec; violations embedded."""
    if spec.report_family == "performance_scorecard":
        reflection = _execute_scorecard(spec, store)
    elif spec.report_family == "trend_overall":
        reflection = _execute_trend_overall(spec, store)
    else:
        reflection = _execute_trend_monthly(spec, store)
    reflection.violations = validate_contract(reflection)
    return reflection


def _execute_scorecard(spec: JobSpec, store: ArtifactStore) -> Reflection:
    series_map, _frames = _load_dataset(store, spec.dataset_id)
    series_map = _apply_scope(series_map, spec)
    records, weights_doc = _fetch_run_docs(store, spec)
    gap = int(weights_doc["config"]["gap"])

    window = set(_window_periods(series_map, spec.window_months))
    revenue_at = {
        key: {o.period: o.revenue for o in s.observations}
        for key, s in series_map.items()
    }

    by_cp: dict[str, list] = {}
    rev_dec: dict[str, Decimal] = {}
    for r in records:
        if r["model_id"] != "ensemble" or r["key"] not in series_map:
            continue
        target = r["origin"].plus(gap + r["horizon"])
        if target not in window:
            continue
        revenue = revenue_at[r["key"]].get(target, 0.0)
        entity = str(r["key"])
        by_cp.setdefault(entity, []).append((r["actual"], r["forecast"], revenue))
        rev_dec[entity] = rev_dec.get(entity, Decimal(0)) + _dec(revenue)
    if not by_cp:
        raise ValueError("no backtest records in the evaluation window")

    def split_entity(entity: str) -> tuple[str, str]:
        country, part = entity.split("/", 1)
        return country, part

    by_country: dict[str, list] = {}
    by_part: dict[str, list] = {}
    for entity, recs in by_cp.items():
        country, part = split_entity(entity)
        by_country.setdefault(country, []).extend(recs)
        by_part.setdefault(part, []).extend(recs)

    rows_cp = metric_rows(by_cp)
    rows_country = metric_rows(by_country)
    rows_part = metric_rows(by_part)
    overall = point_metrics([r for recs in by_cp.values() for r in recs])

    rev_country: dict[str, Decimal] = {}
    rev_part: dict[str, Decimal] = {}
    for entity, dec in rev_dec.items():
        country, part = split_entity(entity)
        rev_country[country] = rev_country.get(country, Decimal(0)) + dec
        rev_part[part] = rev_part.get(part, Decimal(0)) + dec
    total_rev = sum(rev_dec.values(), Decimal(0))

    tol_count, tol_rev = tolerance_shares(rows_cp, spec.deviation_pct)
    bands = band_distribution([r.mape for r in rows_cp])
    bands_by_country = band_distributions_by(
        rows_cp, lambda r: split_entity(r.entity_id)[0]
    )
    families = group_stats(
        rows_cp, lambda r: _family_of(split_entity(r.entity_id)[1])
    )
    rank_country = entity_rankings(rows_country, n=3)
    rank_part = entity_rankings(rows_part, n=5)
    risk, win = flag_risk_win(rows_cp, 80.0, spec.deviation_pct)

    revenues = sorted(r.revenue for r in rows_cp)
    qs = [revenues[int(q * (len(revenues) - 1))] for q in (0.25, 0.5, 0.75)]
    edges = [0.0]
    for q in qs:
        if q > edges[-1]:
            edges.append(q)
    rev_bins, bin_dev = revenue_bin_analysis(
        rows_cp, edges, country_of=lambda r: split_entity(r.entity_id)[0]
    )
    filt = filtered_summary(by_cp)

    def metric_row_cells(row: MetricRow, rev: Decimal) -> list:
        return [
            row.entity_id, row.mape, row.wmape, row.bias_pct,
            _dstr(rev), row.coverage, row.n_records,
        ]

    metric_cols = [
        "entity", "mape", "wmape", "bias_pct", "revenue", "coverage",
        "n_records",
    ]
    tables = {
        "kpi": _table(
            ["metric", "value"],
            [
                ["window_start", str(min(window))],
                ["window_end", str(max(window))],
                ["window_months", spec.window_months],
                ["deviation_pct", spec.deviation_pct],
                ["n_records", overall.n_records],
                ["n_entities", len(rows_cp)],
                ["mape", overall.mape],
                ["wmape", overall.wmape],
                ["bias_pct", overall.bias_pct],
                ["over_pct", overall.over_pct],
                ["under_pct", overall.under_pct],
                ["p50_abs_error", overall.percentiles["P50"]],
                ["p90_abs_error", overall.percentiles["P90"]],
                ["p95_abs_error", overall.percentiles["P95"]],
                ["coverage", overall.coverage],
                ["tolerance_share_count", tol_count],
                ["tolerance_share_revenue", tol_rev],
                ["total_revenue", _dstr(total_rev)],
                [
                    "filtered_wmape",
                    filt.primary.wmape if filt.primary else None,
                ],
                ["n_filtered_entities", filt.n_included],
            ],
        ),
        "by_country": _table(
            metric_cols,
            [metric_row_cells(r, rev_country[r.entity_id]) for r in rows_country],
        ),
        "top_countries": _table(
            metric_cols,
            [
                metric_row_cells(r, rev_country[r.entity_id])
                for r in rank_country["top"]
            ],
        ),
        "bottom_countries": _table(
            metric_cols,
            [
                metric_row_cells(r, rev_country[r.entity_id])
                for r in rank_country["bottom"]
            ],
        ),
        "by_part": _table(
            metric_cols,
            [metric_row_cells(r, rev_part[r.entity_id]) for r in rows_part],
        ),
        "top_parts": _table(
            metric_cols,
            [metric_row_cells(r, rev_part[r.entity_id]) for r in rank_part["top"]],
        ),
        "bottom_parts": _table(
            metric_cols,
            [
                metric_row_cells(r, rev_part[r.entity_id])
                for r in rank_part["bottom"]
            ],
        ),
        "by_country_part": _table(
            metric_cols,
            [metric_row_cells(r, rev_dec[r.entity_id]) for r in rows_cp],
        ),
        "family_stats": _table(
            ["family", "mean_mape", "median_mape", "revw_mape", "revenue",
             "n_members"],
            [
                [g.entity_id, g.mean_mape, g.median_mape, g.revw_mape,
                 g.revenue, g.n_members]
                for g in families
            ],
        ),
        "bands": _table(
            ["band", "scope", "share", "denominator_count", "coverage"],
            [
                [label, "all", bands.shares[label], bands.denominator_count,
                 bands.coverage_note]
                for label in BAND_LABELS
            ],
        ),
        "bands_by_country": _table(
            ["scope", "band", "share", "denominator_count", "coverage"],
            [
                [country, label, dist.shares[label], dist.denominator_count,
                 dist.coverage_note]
                for country, dist in bands_by_country.items()
                for label in BAND_LABELS
            ],
        ),
        "risk": _table(
            metric_cols,
            [metric_row_cells(r, rev_dec[r.entity_id]) for r in risk],
        ),
        "win": _table(
            metric_cols,
            [metric_row_cells(r, rev_dec[r.entity_id]) for r in win],
        ),
        "revenue_bins": _table(
            ["lower", "upper", "avg_mape", "material_count"],
            [
                [b.lower, None if math.isinf(b.upper) else b.upper,
                 b.avg_mape, b.material_count]
                for b in rev_bins
            ],
        ),
        "bin_deviations": _table(
            ["country", "bin_index", "deviation", "low_support"],
            [
                [d.country, d.bin_index, d.deviation, d.low_support]
                for d in bin_dev
            ],
        ),
        "filtered_summary": _table(
            ["view", "mape", "wmape", "bias_pct", "coverage", "n_records",
             "n_entities"],
            [
                [
                    "filtered",
                    filt.primary.mape if filt.primary else None,
                    filt.primary.wmape if filt.primary else None,
                    filt.primary.bias_pct if filt.primary else None,
                    filt.primary.coverage if filt.primary else None,
                    filt.primary.n_records if filt.primary else 0,
                    filt.n_included,
                ],
                [
                    "all", filt.context.mape, filt.context.wmape,
                    filt.context.bias_pct, filt.context.coverage,
                    filt.context.n_records, filt.n_total,
                ],
            ],
        ),
    }

    cum = []
    running = Decimal(0)
    for row in sorted(rows_cp, key=lambda r: (-r.revenue, r.entity_id)):
        running += rev_dec[row.entity_id]
        cum.append(float(running / total_rev) if total_rev else 0.0)
    figures = [
        {
            "id": "fig_bands",
            "kind": "bar",
            "title": "MAPE band distribution",
            "x_label": "band",
            "y_label": "share of entities",
            "table_ref": "bands",
            "series": [
                {
                    "name": "share",
                    "x": list(BAND_LABELS),
                    "y": [bands.shares[b] for b in BAND_LABELS],
                }
            ],
        },
        {
            "id": "fig_bottom_parts",
            "kind": "bar",
            "title": "Highest-error parts (WMAPE)",
            "x_label": "part",
            "y_label": "wmape %",
            "table_ref": "bottom_parts",
            "series": [
                {
                    "name": "wmape",
                    "x": [r.entity_id for r in rank_part["bottom"]],
                    "y": [r.wmape for r in rank_part["bottom"]],
                }
            ],
        },
        {
            "id": "fig_pareto",
            "kind": "pareto",
            "title": "Cumulative revenue by entity",
            "x_label": "entities by revenue",
            "y_label": "cumulative share",
            "table_ref": "by_country_part",
            "series": [
                {
                    "name": "cumulative_share",
                    "x": list(range(1, len(cum) + 1)),
                    "y": cum,
                }
            ],
        },
    ]

    kpis = {row[0]: row[1] for row in tables["kpi"]["rows"]}
    return Reflection(job=spec, kpis=kpis, tables=tables, figures=figures)


def _monthly_metric_values(rows, periods):
    """Per-month mape/wmape/bias (percent) from (actual, forecast) rows."""
    out = {"mape": ([], []), "wmape": ([], []), "bias": ([], [])}
    for period in periods:
        recs = rows.get(period)
        if not recs:
            continue
        apes = [
            abs(a - f) / a * 100.0 for a, f in recs if a > 0
        ]
        total = sum(a for a, _ in recs)
        if apes:
            out["mape"][0].append(period)
            out["mape"][1].append(sum(apes) / len(apes))
        if total > 0:
            abs_err = sum(abs(a - f) for a, f in recs)
            signed = sum(f - a for a, f in recs)
            out["wmape"][0].append(period)
            out["wmape"][1].append(abs_err / total * 100.0)
            out["bias"][0].append(period)
            out["bias"][1].append(signed / total * 100.0)
    return out


def _cell_mapes(store: ArtifactStore, spec: JobSpec, series_map):
    """Ensemble backtest MAPE per (country, part), when a run exists."""
    if not spec.config_hash:
        return {}
    try:
        records, weights_doc = _fetch_run_docs(store, spec)
    except MissingArtifact:
        return {}
    gap = int(weights_doc["config"]["gap"])
    window = set(_window_periods(series_map, spec.window_months))
    by_key: dict[SeriesKey, list] = {}
    for r in records:
        if r["model_id"] != "ensemble" or r["key"] not in series_map:
            continue
        if r["origin"].plus(gap + r["horizon"]) not in window:
            continue
        by_key.setdefault(r["key"], []).append((r["actual"], r["forecast"], 0.0))
    return {
        key: point_metrics(recs).mape for key, recs in by_key.items()
    }


def _execute_trend_overall(spec: JobSpec, store: ArtifactStore) -> Reflection:
    series_map, frames_by_country = _load_dataset(store, spec.dataset_id)
    series_map = _apply_scope(series_map, spec)
    window = _window_periods(series_map, spec.window_months)
    window_set = set(window)

    totals_country: dict[str, tuple[float, float]] = {}
    totals_family: dict[str, tuple[float, float]] = {}
    totals_part: dict[str, tuple[float, float]] = {}
    total_a = Decimal(0)
    total_r = Decimal(0)
    member_rows = []
    cell_mape = _cell_mapes(store, spec, series_map)
    for key in sorted(series_map):
        s = series_map[key]
        a = sum(o.actuals for o in s.observations if o.period in window_set)
        r = sum(o.revenue for o in s.observations if o.period in window_set)
        for totals, ent in (
            (totals_country, key.country),
            (totals_family, _family_of(key.part)),
            (totals_part, key.part),
        ):
            pa, pr = totals.get(ent, (0.0, 0.0))
            totals[ent] = (pa + a, pr + r)
        for o in s.observations:
            if o.period in window_set:
                total_a += _dec(o.actuals)
                total_r += _dec(o.revenue)
        member_rows.append(
            (key.country, _family_of(key.part), r, a, cell_mape.get(key))
        )

    shares_country, _ = value_signals(totals_country)
    shares_family, _ = value_signals(totals_family)
    shares_part, asp_summary = value_signals(totals_part)
    conc_family = mix_concentration(shares_family)
    conc_part = mix_concentration(shares_part)
    cells = intersection_profile(member_rows)

    part_revenue = {
        SeriesKey("*", ent): r for ent, (_, r) in totals_part.items()
    }
    tiers = pareto_tiers(part_revenue)
    high_keys = [k for k, t in tiers.items() if t == "high"]
    high_share = (
        sum(part_revenue[k] for k in high_keys) / sum(part_revenue.values())
        if sum(part_revenue.values()) > 0
        else 0.0
    )

    # metric trajectories over the full history, attributed against the
    # regime calendar; the window only scopes the share tables above
    snaive_rows = insample_snaive_records(series_map)
    by_scope: dict[str, dict] = {"overall": {}}
    for key, period, actual, forecast in snaive_rows:
        by_scope["overall"].setdefault(period, []).append((actual, forecast))
        by_scope.setdefault(key.country, {}).setdefault(period, []).append(
            (actual, forecast)
        )
    all_periods = sorted({p for rows in by_scope.values() for p in rows})
    countries_sorted = sorted(k for k in by_scope if k != "overall")
    verdict_rows = []
    cp_rows = []
    trend_fig_series = None
    for scope_name in ["overall"] + countries_sorted:
        frames = (
            frames_by_country.get(scope_name)
            if scope_name != "overall"
            else frames_by_country.get(
                countries_sorted[0] if countries_sorted else "", []
            )
        )
        metric_series = _monthly_metric_values(by_scope[scope_name], all_periods)
        for metric in ("mape", "wmape", "bias"):
            periods, values = metric_series[metric]
            if len(values) < 6:
                continue
            verdict = metric_trend(
                scope_name, metric, periods, values, frames=frames or None
            )
            verdict_rows.append(
                [scope_name, metric, verdict.slope, verdict.classification,
                 len(verdict.change_points)]
            )
            for point, label in zip(
                verdict.change_points,
                verdict.attributions or [""] * len(verdict.change_points),
            ):
                cp_rows.append([scope_name, metric, str(point), label])
            if scope_name == "overall" and metric == "mape":
                trend_fig_series = (
                    [str(p) for p in periods], list(values)
                )

    tables = {
        "kpi": _table(
            ["metric", "value"],
            [
                ["window_start", str(window[0])],
                ["window_end", str(window[-1])],
                ["window_months", spec.window_months],
                ["n_countries", len(shares_country)],
                ["n_families", len(shares_family)],
                ["n_parts", len(shares_part)],
                ["total_actuals", _dstr(total_a)],
                ["total_revenue", _dstr(total_r)],
                ["hhi_family", conc_family.hhi],
                ["top_1_family_share", conc_family.top_k[1]],
                ["top_3_family_share", conc_family.top_k[3]],
                ["top_5_family_share", conc_family.top_k[5]],
                ["pareto_high_tier_parts", len(high_keys)],
                ["pareto_high_tier_share", high_share],
                ["asp_coverage", asp_summary.coverage],
                [
                    "n_low_support_cells",
                    sum(1 for c in cells if c.low_support),
                ],
                [
                    "n_change_points",
                    sum(r[4] for r in verdict_rows),
                ],
            ],
        ),
        "shares_country": _table(
            ["entity", "a_total", "r_total", "share_a", "share_r", "asp",
             "prem_disc"],
            [
                [r.entity_id, r.a_total, r.r_total, r.share_a, r.share_r,
                 r.asp, r.prem_disc]
                for r in shares_country
            ],
        ),
        "shares_family": _table(
            ["entity", "a_total", "r_total", "share_a", "share_r", "asp",
             "prem_disc"],
            [
                [r.entity_id, r.a_total, r.r_total, r.share_a, r.share_r,
                 r.asp, r.prem_disc]
                for r in shares_family
            ],
        ),
        "asp_summary": _table(
            ["metric", "value"],
            [
                ["mean", asp_summary.mean],
                ["median", asp_summary.median],
                ["low", asp_summary.low],
                ["high", asp_summary.high],
                ["coverage", asp_summary.coverage],
                [
                    "winsor_low",
                    asp_summary.winsor_bounds[0]
                    if asp_summary.winsor_bounds
                    else None,
                ],
                [
                    "winsor_high",
                    asp_summary.winsor_bounds[1]
                    if asp_summary.winsor_bounds
                    else None,
                ],
            ],
        ),
        "concentration": _table(
            ["measure", "value"],
            [
                ["hhi_family", conc_family.hhi],
                ["hhi_part", conc_part.hhi],
                ["top_1_family_share", conc_family.top_k[1]],
                ["top_3_family_share", conc_family.top_k[3]],
                ["top_5_family_share", conc_family.top_k[5]],
                ["pareto_high_tier_parts", len(high_keys)],
                ["pareto_high_tier_share", high_share],
            ],
        ),
        "intersections": _table(
            ["country", "group", "revenue", "actuals", "n_materials",
             "low_support", "band_lt10", "band_10_20", "band_20_40",
             "band_gt40", "band_denominator"],
            [
                [
                    c.country, c.group, c.revenue, c.actuals, c.n_materials,
                    c.low_support,
                    c.bands.shares["<10%"], c.bands.shares["10-20%"],
                    c.bands.shares["20-40%"], c.bands.shares[">40%"],
                    c.bands.denominator_count,
                ]
                for c in cells
            ],
        ),
        "verdicts": _table(
            ["entity", "metric", "slope_pp_per_month", "classification",
             "n_change_points"],
            verdict_rows,
        ),
        "change_points": _table(
            ["entity", "metric", "period", "attribution"],
            cp_rows,
        ),
    }

    figures = [
        {
            "id": "fig_shares",
            "kind": "bar",
            "title": "Revenue share by country",
            "x_label": "country",
            "y_label": "revenue share",
            "table_ref": "shares_country",
            "series": [
                {
                    "name": "share_r",
                    "x": [r.entity_id for r in shares_country],
                    "y": [r.share_r for r in shares_country],
                }
            ],
        },
        {
            "id": "fig_pareto",
            "kind": "pareto",
            "title": "Cumulative revenue share by part",
            "x_label": "parts by revenue",
            "y_label": "cumulative share",
            "table_ref": "concentration",
            "series": [
                {
                    "name": "cumulative_share",
                    "x": [e for e, _ in conc_part.pareto],
                    "y": [c for _, c in conc_part.pareto],
                }
            ],
        },
    ]
    if trend_fig_series is not None:
        figures.append(
            {
                "id": "fig_metric_trend",
                "kind": "line",
                "title": "Overall MAPE trajectory",
                "x_label": "month",
                "y_label": "mape %",
                "table_ref": "verdicts",
                "series": [
                    {
                        "name": "mape",
                        "x": trend_fig_series[0],
                        "y": trend_fig_series[1],
                    }
                ],
            }
        )

    kpis = {row[0]: row[1] for row in tables["kpi"]["rows"]}
    return Reflection(job=spec, kpis=kpis, tables=tables, figures=figures)


def _execute_trend_monthly(spec: JobSpec, store: ArtifactStore) -> Reflection:
    series_map, _frames = _load_dataset(store, spec.dataset_id)
    series_map = _apply_scope(series_map, spec)
    timeline_end = max(s.last_period for s in series_map.values())
    timeline_start = min(
        s.observations[0].period for s in series_map.values()
    )
    month = PeriodId.parse(spec.month) if spec.month else timeline_end
    prior = month.pred()
    if month > timeline_end or prior < timeline_start:
        raise ValueError(
            f"month {month} has no prior transition inside the history"
        )

    def totals_at(period, level) -> tuple[dict, dict, dict]:
        acts: dict[str, float] = {}
        revs: dict[str, float] = {}
        decs: dict[str, tuple[Decimal, Decimal]] = {}
        for key in sorted(series_map):
            ent = key.part if level == "part" else key.country
            for o in series_map[key].observations:
                if o.period == period:
                    acts[ent] = acts.get(ent, 0.0) + o.actuals
                    revs[ent] = revs.get(ent, 0.0) + o.revenue
                    da, dr = decs.get(ent, (Decimal(0), Decimal(0)))
                    decs[ent] = (da + _dec(o.actuals), dr + _dec(o.revenue))
        return acts, revs, decs

    acts_cur_p, revs_cur_p, decs_cur_p = totals_at(month, "part")
    acts_pri_p, revs_pri_p, decs_pri_p = totals_at(prior, "part")
    acts_cur_c, revs_cur_c, decs_cur_c = totals_at(month, "country")
    acts_pri_c, revs_pri_c, decs_pri_c = totals_at(prior, "country")

    def mom_table(cur, pri, decs_cur, decs_pri, measure_idx):
        rows, proof = mom_decomposition(cur, pri)
        cells = []
        total_delta = Decimal(0)
        for row in rows:
            cd = decs_cur.get(row.entity_id, (Decimal(0), Decimal(0)))
            pd = decs_pri.get(row.entity_id)
            cur_dec = cd[measure_idx]
            pri_dec = pd[measure_idx] if pd is not None else None
            delta = cur_dec - (pri_dec if pri_dec is not None else Decimal(0))
            total_delta += delta
            cells.append(
                [
                    row.entity_id,
                    _dstr(cur_dec),
                    _dstr(pri_dec) if pri_dec is not None else None,
                    _dstr(delta),
                    row.pct_change,
                    row.contribution_share,
                ]
            )
        return cells, total_delta, proof

    mom_cols = ["entity", "current", "prior", "delta", "pct_change",
                "contribution_share"]
    ap_cells, ap_total, _ = mom_table(
        acts_cur_p, acts_pri_p, decs_cur_p, decs_pri_p, 0
    )
    rp_cells, rp_total, _ = mom_table(
        revs_cur_p, revs_pri_p, decs_cur_p, decs_pri_p, 1
    )
    ac_cells, ac_total, _ = mom_table(
        acts_cur_c, acts_pri_c, decs_cur_c, decs_pri_c, 0
    )
    rc_cells, rc_total, _ = mom_table(
        revs_cur_c, revs_pri_c, decs_cur_c, decs_pri_c, 1
    )

    def proof_row(measure, cells, total):
        contrib = sum((Decimal(c[3]) for c in cells), Decimal(0))
        diff = contrib - total
        return [
            measure, _dstr(contrib), _dstr(total), _dstr(diff), diff == 0
        ]

    window = [
        month.plus(-i)
        for i in range(spec.window_months - 1, -1, -1)
        if month.plus(-i) >= timeline_start
    ]
    monthly: dict[str, list[tuple[float, float]]] = {}
    monthly_total_actuals = []
    for period in window:
        acts, revs, _ = totals_at(period, "part")
        monthly_total_actuals.append(sum(acts.values()))
        for ent in sorted(set(acts) | set(monthly)):
            monthly.setdefault(ent, []).append(
                (acts.get(ent, 0.0), revs.get(ent, 0.0))
            )
    mean_units = {
        ent: sum(a for a, _ in series) / len(series)
        for ent, series in monthly.items()
    }
    ranked = sorted(mean_units, key=lambda e: (-mean_units[e], e))
    n_large = max(1, math.ceil(len(ranked) * 0.2))
    large_ids = set(ranked[:n_large])
    momentum_rows, alerts = momentum_alerts(monthly, large_ids=large_ids)

    prior_act_total = sum((Decimal(c[2] or "0") for c in ap_cells), Decimal(0))
    prior_rev_total = sum((Decimal(c[2] or "0") for c in rp_cells), Decimal(0))
    pct_a = (
        float(ap_total / prior_act_total * 100) if prior_act_total > 0 else None
    )
    pct_r = (
        float(rp_total / prior_rev_total * 100) if prior_rev_total > 0 else None
    )

    tables = {
        "kpi": _table(
            ["metric", "value"],
            [
                ["month", str(month)],
                ["prior_month", str(prior)],
                ["total_delta_actuals", _dstr(ap_total)],
                ["total_delta_revenue", _dstr(rp_total)],
                ["pct_change_actuals", pct_a],
                ["pct_change_revenue", pct_r],
                ["n_entities", len(ap_cells)],
                ["n_alerts", len(alerts)],
                ["n_large_entities", len(large_ids)],
            ],
        ),
        "mom_actuals_parts": _table(mom_cols, ap_cells),
        "mom_revenue_parts": _table(mom_cols, rp_cells),
        "mom_actuals_countries": _table(mom_cols, ac_cells),
        "mom_revenue_countries": _table(mom_cols, rc_cells),
        "recon_proof": _table(
            ["measure", "sum_of_contributions", "total_delta", "difference",
             "exact"],
            [
                proof_row("actuals_parts", ap_cells, ap_total),
                proof_row("revenue_parts", rp_cells, rp_total),
                proof_row("actuals_countries", ac_cells, ac_total),
                proof_row("revenue_countries", rc_cells, rc_total),
            ],
        ),
        "momentum": _table(
            ["entity", "delta_t", "delta_prev", "momentum"],
            [
                [m.entity_id, m.delta_t, m.delta_prev, m.momentum]
                for m in momentum_rows
            ],
        ),
        "alerts": _table(
            ["entity", "rule", "message", "value"],
            [[a.entity_id, a.rule, a.message, a.value] for a in alerts],
        ),
    }

    movers = sorted(
        rp_cells, key=lambda c: (-abs(Decimal(c[3])), c[0])
    )[:5]
    figures = [
        {
            "id": "fig_monthly_actuals",
            "kind": "line",
            "title": "Total monthly actuals",
            "x_label": "month",
            "y_label": "units",
            "table_ref": "mom_actuals_parts",
            "series": [
                {
                    "name": "actuals",
                    "x": [str(p) for p in window],
                    "y": monthly_total_actuals,
                }
            ],
        },
        {
            "id": "fig_top_movers",
            "kind": "bar",
            "title": "Largest revenue movers",
            "x_label": "part",
            "y_label": "revenue delta",
            "table_ref": "mom_revenue_parts",
            "series": [
                {
                    "name": "delta",
                    "x": [c[0] for c in movers],
                    "y": [float(Decimal(c[3])) for c in movers],
                }
            ],
        },
    ]

    kpis = {row[0]: row[1] for row in tables["kpi"]["rows"]}
    return Reflection(job=spec, kpis=kpis, tables=tables, figures=figures)


# -- contract validation --------------------------------------------------------


def _col(table: dict, name: str) -> int:
    return table["columns"].index(name)


def validate_contract(reflection) -> list[dict]:
    """The five quality checks, as data. Accepts a Reflection or its doc."""
    doc = reflection.to_doc() if hasattr(reflection, "to_doc") else reflection
    tables = doc.get("tables", {})
    kpis = doc.get("kpis", {})
    violations: list[dict] = []

    def violate(check, table, message):
        violations.append({"check": check, "table": table, "message": message})

    # (a) totals reconcile
    proof = tables.get("recon_proof")
    if proof is not None:
        mom_by_measure = {
            "actuals_parts": "mom_actuals_parts",
            "revenue_parts": "mom_revenue_parts",
            "actuals_countries": "mom_actuals_countries",
            "revenue_countries": "mom_revenue_countries",
        }
        t_col = _col(proof, "total_delta")
        m_col = _col(proof, "measure")
        for row in proof["rows"]:
            table_name = mom_by_measure.get(row[m_col])
            table = tables.get(table_name)
            if table is None:
                continue
            d_col = _col(table, "delta")
            contrib = sum(
                (Decimal(r[d_col]) for r in table["rows"]), Decimal(0)
            )
            if contrib != Decimal(row[t_col]):
                violate(
                    "totals_reconcile",
                    table_name,
                    f"sum of contributions {contrib} != total delta "
                    f"{row[t_col]}",
                )
    if "total_revenue" in kpis and kpis["total_revenue"] is not None:
        total = Decimal(str(kpis["total_revenue"]))
        for name in ("by_country_part", "by_country", "by_part"):
            table = tables.get(name)
            if table is None:
                continue
            r_col = _col(table, "revenue")
            got = sum((Decimal(r[r_col]) for r in table["rows"]), Decimal(0))
            if got != total:
                violate(
                    "totals_reconcile",
                    name,
                    f"revenue sum {got} != dataset total {total}",
                )

    # (b) bin completeness
    for name in ("bands", "bands_by_country"):
        table = tables.get(name)
        if table is None:
            continue
        s_col = _col(table, "scope")
        sh_col = _col(table, "share")
        d_col = _col(table, "denominator_count")
        by_scope: dict[str, list] = {}
        for row in table["rows"]:
            by_scope.setdefault(row[s_col], []).append(row)
        for scope_name, rows in by_scope.items():
            if rows[0][d_col] > 0:
                total = sum(r[sh_col] for r in rows)
                if abs(total - 1.0) > 1e-9:
                    violate(
                        "bin_completeness",
                        name,
                        f"band shares for {scope_name!r} sum to {total}",
                    )
    inter = tables.get("intersections")
    if inter is not None:
        d_col = _col(inter, "band_denominator")
        share_cols = [
            _col(inter, c)
            for c in ("band_lt10", "band_10_20", "band_20_40", "band_gt40")
        ]
        for row in inter["rows"]:
            if row[d_col] > 0:
                total = sum(row[c] for c in share_cols)
                if abs(total - 1.0) > 1e-9:
                    violate(
                        "bin_completeness",
                        "intersections",
                        f"cell {row[0]}/{row[1]} band shares sum to {total}",
                    )

    # (c) denominator validity
    for name in ("by_country", "by_part", "by_country_part", "risk", "win"):
        table = tables.get(name)
        if table is None:
            continue
        m_col = _col(table, "mape")
        c_col = _col(table, "coverage")
        for row in table["rows"]:
            if row[c_col] == 0 and row[m_col] is not None:
                violate(
                    "denominator_validity",
                    name,
                    f"{row[0]} reports MAPE with no positive actuals",
                )
    for name in ("shares_country", "shares_family"):
        table = tables.get(name)
        if table is None:
            continue
        a_col = _col(table, "a_total")
        asp_col = _col(table, "asp")
        for row in table["rows"]:
            if (row[asp_col] is None) != (row[a_col] == 0):
                violate(
                    "denominator_validity",
                    name,
                    f"{row[0]} ASP defined inconsistently with units",
                )
    for name in (
        "mom_actuals_parts", "mom_revenue_parts", "mom_actuals_countries",
        "mom_revenue_countries",
    ):
        table = tables.get(name)
        if table is None:
            continue
        p_col = _col(table, "prior")
        pc_col = _col(table, "pct_change")
        for row in table["rows"]:
            prior_ok = row[p_col] is not None and Decimal(row[p_col]) > 0
            if (row[pc_col] is not None) and not prior_ok:
                violate(
                    "denominator_validity",
                    name,
                    f"{row[0]} has pct_change with non-positive prior",
                )

    # (d) named outliers present in detail tables
    detail_entities: set[str] = set()
    for name in ("by_country_part", "by_country", "by_part",
                 "mom_actuals_parts", "mom_actuals_countries",
                 "shares_country", "shares_family", "momentum"):
        table = tables.get(name)
        if table is not None and table["rows"]:
            detail_entities |= {row[0] for row in table["rows"]}
    for name in ("risk", "win", "top_countries", "bottom_countries",
                 "top_parts", "bottom_parts", "alerts"):
        table = tables.get(name)
        if table is None:
            continue
        for row in table["rows"]:
            if row[0] not in detail_entities:
                violate(
                    "named_outlier",
                    name,
                    f"{row[0]} not present in any detail table",
                )

    # (e) ranking consistency with underlying tables
    def expect_ranked(detail_name, metric):
        table = tables.get(detail_name)
        if table is None:
            return None
        m_col = _col(table, metric)
        rows = [r for r in table["rows"] if r[m_col] is not None]
        ascending = sorted(rows, key=lambda r: (r[m_col], r[0]))
        descending = sorted(rows, key=lambda r: (-r[m_col], r[0]))
        return ascending, descending

    for top_name, bottom_name, detail_name in (
        ("top_countries", "bottom_countries", "by_country"),
        ("top_parts", "bottom_parts", "by_part"),
    ):
        ranked = expect_ranked(detail_name, "wmape")
        if ranked is None:
            continue
        for name, expected in (
            (top_name, [r[0] for r in ranked[0]]),
            (bottom_name, [r[0] for r in ranked[1]]),
        ):
            table = tables.get(name)
            if table is None:
                continue
            got = [row[0] for row in table["rows"]]
            if got != expected[: len(got)]:
                violate(
                    "ranking_consistency",
                    name,
                    f"{name} order {got} disagrees with {detail_name}",
                )
    for name in ("risk", "win"):
        table = tables.get(name)
        if table is None or not table["rows"]:
            continue
        r_col = _col(table, "revenue")
        revs = [Decimal(row[r_col]) for row in table["rows"]]
        if any(revs[i] < revs[i + 1] for i in range(len(revs) - 1)):
            violate(
                "ranking_consistency",
                name,
                f"{name} rows not sorted by revenue descending",
            )

    return violations


# -- narrative ------------------------------------------------------------------


class RemoteNarrativeProvider:
    """Single POST of the reflection document; UTF-8 text back."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    def __call__(self, reflection_doc: dict, role: str) -> str:
        payload = canonical_json({"reflection": reflection_doc, "role": role})
        request = urllib.request.Request(
            self.url,
            data=payload,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        with urllib.request.urlopen(request, timeout=self.timeout) as resp:
            if resp.status != 200:
                raise OSError(f"provider returned status {resp.status}")
            return resp.read().decode("utf-8")


def _cell_text(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format_display(value)
    return str(value)


def _claim(tables, table_name, row_key, column):
    table = tables[table_name]
    k_col = 0
    c_col = _col(table, column)
    for row in table["rows"]:
        if row[k_col] == row_key:
            value = _cell_text(row[c_col])
            return value, {
                "table": table_name,
                "row": row_key,
                "column": column,
                "value": value,
            }
    raise KeyError(f"no row {row_key!r} in table {table_name!r}")


def _template_narrative(reflection: Reflection, role: str) -> list[dict]:
    """Role-aware blocks anchored only to tables every toggle state keeps,
    so narrative bytes never depend on section toggles."""
    tables = reflection.tables
    family = reflection.job.report_family
    blocks: list[dict] = []

    def block(kind, text, claims):
        blocks.append({"kind": kind, "text": text, "claims": claims})

    if family == "performance_scorecard":
        wmape, c1 = _claim(tables, "kpi", "wmape", "value")
        months, c2 = _claim(tables, "kpi", "window_months", "value")
        n_ent, c3 = _claim(tables, "kpi", "n_entities", "value")
        block(
            "headline",
            f"Overall WMAPE is {wmape}% across {n_ent} entities over the "
            f"last {months} months.",
            [c1, c2, c3],
        )
        contributors = []
        claims = []
        for row in tables["bottom_parts"]["rows"][:3]:
            value, claim = _claim(tables, "bottom_parts", row[0], "wmape")
            contributors.append(f"{row[0]} (WMAPE {value}%)")
            claims.append(claim)
        if contributors:
            block(
                "contributors",
                "Largest misses: " + "; ".join(contributors) + ".",
                claims,
            )
        worst, c1 = _claim(tables, "bands", ">40%", "share")
        tol, c2 = _claim(tables, "kpi", "tolerance_share_count", "value")
        block(
            "risk",
            f"Share of entities in the worst error band is {worst}; "
            f"share inside the deviation tolerance is {tol}.",
            [c1, c2],
        )
        if role == "planner":
            fw, c1 = _claim(tables, "kpi", "filtered_wmape", "value")
            nf, c2 = _claim(tables, "kpi", "n_filtered_entities", "value")
            block(
                "detail",
                f"On the filtered view ({nf} well-observed entities) WMAPE "
                f"is {fw}%.",
                [c1, c2],
            )
            block(
                "checks",
                "Recommended checks: review parts in the worst error band; "
                "confirm interval calibration for flagged segments before "
                "committing inventory.",
                [],
            )
    elif family == "trend_overall":
        hhi, c1 = _claim(tables, "kpi", "hhi_family", "value")
        top1, c2 = _claim(tables, "kpi", "top_1_family_share", "value")
        block(
            "headline",
            f"Family revenue concentration HHI is {hhi}; the largest family "
            f"carries {top1} of revenue.",
            [c1, c2],
        )
        hi_share, c1 = _claim(tables, "kpi", "pareto_high_tier_share", "value")
        hi_n, c2 = _claim(tables, "kpi", "pareto_high_tier_parts", "value")
        block(
            "contributors",
            f"The high revenue tier spans {hi_n} parts and carries "
            f"{hi_share} of revenue.",
            [c1, c2],
        )
        n_cp, c1 = _claim(tables, "kpi", "n_change_points", "value")
        block(
            "risk",
            f"Detected metric change points across scopes: {n_cp}. "
            "Shifts that align with the regime calendar are attributed; "
            "the rest are flagged as possible model drift.",
            [c1],
        )
        if role == "planner":
            low, c1 = _claim(tables, "kpi", "n_low_support_cells", "value")
            cov, c2 = _claim(tables, "kpi", "asp_coverage", "value")
            block(
                "detail",
                f"Low-support country/group cells: {low}; ASP coverage "
                f"is {cov}.",
                [c1, c2],
            )
            block(
                "checks",
                "Recommended checks: verify unattributed change points "
                "against model drift; revisit weights for shifted segments.",
                [],
            )
    else:
        da, c1 = _claim(tables, "kpi", "total_delta_actuals", "value")
        dr, c2 = _claim(tables, "kpi", "total_delta_revenue", "value")
        month, c3 = _claim(tables, "kpi", "month", "value")
        block(
            "headline",
            f"In {month}, actuals moved {da} units month-over-month and "
            f"revenue moved {dr}.",
            [c1, c2, c3],
        )
        claims = []
        texts = []
        for row in tables["mom_actuals_parts"]["rows"][:3]:
            value, claim = _claim(tables, "mom_actuals_parts", row[0], "delta")
            texts.append(f"{row[0]} ({value})")
            claims.append(claim)
        if texts:
            block("contributors",
                  "Largest movers: " + "; ".join(texts) + ".", claims)
        alert_rows = tables["alerts"]["rows"][:5]
        named = sorted({f"{r[0]} ({r[1]})" for r in alert_rows})
        block(
            "risk",
            (
                "Alerts: " + "; ".join(named) + "."
                if named
                else "No alerts this month."
            ),
            [],
        )
        if role == "planner":
            n_alerts, c1 = _claim(tables, "kpi", "n_alerts", "value")
            n_large, c2 = _claim(tables, "kpi", "n_large_entities", "value")
            block(
                "detail",
                f"{n_alerts} alerts over {n_large} monitored large movers.",
                [c1, c2],
            )
            block(
                "checks",
                "Recommended checks: investigate price/mix tags before "
                "re-planning; confirm declines on large movers are demand, "
                "not data gaps.",
                [],
            )
    return blocks


def verify_claims(blocks: list[dict], tables: dict) -> list[str]:
    """Every anchored claim must string-match its cell after rounding."""
    problems = []
    for b in blocks:
        for claim in b.get("claims", []):
            table = tables.get(claim["table"])
            if table is None:
                problems.append(f"claim references unknown table {claim['table']!r}")
                continue
            c_col = _col(table, claim["column"])
            match = [
                row for row in table["rows"] if row[0] == claim["row"]
            ]
            if not match:
                problems.append(
                    f"claim references missing row {claim['row']!r}"
                )
                continue
            cell = _cell_text(match[0][c_col])
            if cell != claim["value"]:
                problems.append(
                    f"claim value {claim['value']!r} != cell {cell!r}"
                )
    return problems


def _entity_universe(tables: dict) -> set[str]:
    out = set()
    for table in tables.values():
        for row in table["rows"]:
            if row and isinstance(row[0], str):
                out.add(row[0])
                if "/" in row[0]:
                    out.update(row[0].split("/", 1))
    return out


def _provider_text_ok(text: str, tables: dict) -> tuple[bool, str]:
    known = _entity_universe(tables)
    for token in _PART_TOKEN.findall(text):
        if token not in known:
            return False, token
    return True, ""


def render_narrative(
    reflection: Reflection, role: str, provider=None
) -> list[dict]:
    """Template blocks, or provider text fenced by outlier re-validation."""
    template = _template_narrative(reflection, role)
    if provider is None:
        return template
    try:
        text = provider(reflection.to_doc(), role)
    except Exception as exc:  # timeout, refusal, bad transport: fall back
        return template + [
            {
                "kind": "provenance",
                "text": "template narrative used; remote provider "
                f"unavailable ({type(exc).__name__})",
                "claims": [],
            }
        ]
    ok, bad = _provider_text_ok(text, reflection.tables)
    if not ok:
        return template + [
            {
                "kind": "provenance",
                "text": "template narrative used; remote provider named "
                f"unknown entity {bad!r}",
                "claims": [],
            }
        ]
    return [
        {"kind": "provider", "text": text, "claims": []},
        {
            "kind": "provenance",
            "text": "narrative provided by remote provider",
            "claims": [],
        },
    ]


# -- assembly -------------------------------------------------------------------

_SECTION_ORDER = {
    "performance_scorecard": (
        ("summary", "overview"),
        ("table", "kpi"),
        ("table", "by_country"),
        ("table", "top_countries"),
        ("table", "bottom_countries"),
        ("table", "by_part"),
        ("table", "top_parts"),
        ("table", "bottom_parts"),
        ("figure_spec", "fig_bottom_parts"),
        ("table", "by_country_part"),
        ("table", "family_stats"),
        ("table", "bands"),
        ("figure_spec", "fig_bands"),
        ("table", "bands_by_country"),
        ("table", "revenue_bins"),
        ("table", "bin_deviations"),
        ("table", "risk"),
        ("table", "win"),
        ("figure_spec", "fig_pareto"),
        ("table", "filtered_summary"),
    ),
    "trend_overall": (
        ("summary", "overview"),
        ("table", "kpi"),
        ("table", "shares_country"),
        ("figure_spec", "fig_shares"),
        ("table", "shares_family"),
        ("table", "asp_summary"),
        ("table", "concentration"),
        ("figure_spec", "fig_pareto"),
        ("table", "intersections"),
        ("table", "verdicts"),
        ("table", "change_points"),
        ("figure_spec", "fig_metric_trend"),
    ),
    "trend_monthly": (
        ("summary", "overview"),
        ("table", "kpi"),
        ("table", "mom_actuals_parts"),
        ("table", "mom_actuals_countries"),
        ("table", "mom_revenue_parts"),
        ("table", "mom_revenue_countries"),
        ("table", "recon_proof"),
        ("table", "momentum"),
        ("table", "alerts"),
        ("figure_spec", "fig_monthly_actuals"),
        ("figure_spec", "fig_top_movers"),
    ),
}

_SUMMARY_KPIS = {
    "performance_scorecard": (
        "window_start", "window_end", "wmape", "mape", "bias_pct",
        "n_entities", "tolerance_share_count",
    ),
    "trend_overall": (
        "window_start", "window_end", "hhi_family", "top_1_family_share",
        "pareto_high_tier_share", "n_change_points",
    ),
    "trend_monthly": (
        "month", "prior_month", "total_delta_actuals",
        "total_delta_revenue", "n_alerts",
    ),
}


def assemble_report(
    reflection: Reflection,
    spec: JobSpec,
    provider=None,
    lineage: dict | None = None,
) -> dict:
    """Ordered sections, narrative and content hash for one report."""
    family = spec.report_family
    figures = {f["id"]: f for f in reflection.figures}
    sections: list[dict] = []

    if reflection.violations:
        sections.append(
            {
                "kind": "banner",
                "id": "failed-validation",
                "title": "failed-validation",
                "violations": reflection.violations,
            }
        )

    for kind, name in _SECTION_ORDER[family]:
        if not spec.include_revenue_views and name in _REVENUE_SECTIONS:
            continue
        if not spec.include_trend and name in _TREND_SECTIONS:
            continue
        if kind == "summary":
            sections.append(
                {
                    "kind": "summary",
                    "id": "overview",
                    "title": f"{family} overview",
                    "kpis": {
                        k: reflection.kpis.get(k)
                        for k in _SUMMARY_KPIS[family]
                    },
                }
            )
        elif kind == "table":
            table = reflection.tables.get(name)
            if table is None:
                continue
            sections.append(
                {
                    "kind": "table",
                    "id": name,
                    "title": name.replace("_", " "),
                    "columns": table["columns"],
                    "rows": table["rows"],
                }
            )
        else:
            figure = figures.get(name)
            if figure is None:
                continue
            sections.append(
                {
                    "kind": "figure_spec",
                    "id": figure["id"],
                    "title": figure["title"],
                    "chart": figure["kind"],
                    "x_label": figure["x_label"],
                    "y_label": figure["y_label"],
                    "table_ref": figure["table_ref"],
                    "series": figure["series"],
                }
            )

    narrative = {}
    if spec.include_narrative:
        narrative[spec.role] = render_narrative(
            reflection, spec.role, provider
        )

    doc = {
        "job": spec.to_dict(),
        "sections": sections,
        "narrative": narrative,
        "lineage": lineage or {},
    }
    doc["content_hash"] = hash_bytes(canonical_json(doc))
    return doc


@dataclass(frozen=True)
class ReportResult:
    spec: JobSpec
    reflection: Reflection
    document: dict
    payload: bytes
    run_id: str
    content_hash: str


def generate_report(
    store: ArtifactStore, raw_request: dict, provider=None
) -> ReportResult:
    """normalize -> execute -> validate -> assemble -> persist."""
    spec = normalize_request(raw_request)
    if not store.has_dataset(spec.dataset_id):
        raise NotFound(f"dataset {spec.dataset_id!r} not registered")
    reflection = execute_jobspec(spec, store)

    meta = store.dataset_meta(spec.dataset_id)
    runs = {}
    if spec.config_hash:
        for kind in ("residuals", "weights", "forecasts"):
            run = store.find_run(spec.dataset_id, spec.config_hash, kind)
            if run:
                runs[kind] = run
    lineage = {
        "dataset_id": spec.dataset_id,
        "demand_hash": meta["demand_hash"],
        "exog_hash": meta["exog_hash"],
        "config_hash": spec.config_hash,
        "spec_hash": spec.spec_hash(),
        "runs": runs,
    }
    document = assemble_report(reflection, spec, provider, lineage)
    payload = canonical_json(document)
    run_id = store.persist_artifact(
        spec.dataset_id, spec.spec_hash(), KIND_BY_FAMILY[spec.report_family],
        payload,
    )
    return ReportResult(
        spec=spec,
        reflection=reflection,
        document=document,
        payload=payload,
        run_id=run_id,
        content_hash=document["content_hash"],
    )
