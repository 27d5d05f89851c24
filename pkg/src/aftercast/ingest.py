"""CSV ingestion for demand history and exogenous frames.

Loaders are pure given file bytes: the same bytes always produce the same
in-memory structures and the same content hash. Hashing canonicalizes line
endings to LF and strips trailing whitespace per line so the hash is stable
across platforms.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .core import (
    Defect,
    DemandSeries,
    ExogenousFrame,
    LIFECYCLES,
    MonthlyObservation,
    PeriodId,
    REGIMES,
    SeriesKey,
)
from .serialize import hash_bytes

DEMAND_HEADER = ["country", "part", "year", "month", "actuals", "revenue", "price"]
EXOG_HEADER = [
    "country",
    "year",
    "month",
    "regime",
    "months_since_regime_start",
    "lifecycle",
    "holiday_count",
    "macro_index",
]


class IngestError(ValueError):
    """Malformed or contradictory input file content."""


@dataclass(frozen=True)
class DatasetVersion:
    dataset_id: str
    content_hash: str
    loaded_at: str
    row_count: int


@dataclass
class ExogenousLoad:
    frames_by_country: dict[str, list[ExogenousFrame]]
    version: DatasetVersion
    defects: list[Defect] = field(default_factory=list)


def canonicalize_bytes(raw: bytes) -> bytes:
    """Normalize line endings to LF, strip trailing whitespace per line,
    and drop trailing blank lines so hashes ignore final-newline style."""
    text = raw.decode("utf-8")
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    joined = "\n".join(line.rstrip() for line in lines)
    return joined.rstrip("\n").encode("utf-8")


def _version(dataset_id: str, canonical: bytes, rows: int) -> DatasetVersion:
    return DatasetVersion(
        dataset_id=dataset_id,
        content_hash=hash_bytes(canonical),
        loaded_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        row_count=rows,
    )


def _parse_period(row: dict, line_no: int) -> PeriodId:
    try:
        return PeriodId(int(row["year"]), int(row["month"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"line {line_no}: malformed period ({exc})") from exc


def load_demand_csv(
    path: str | Path, dataset_id: Optional[str] = None
) -> tuple[dict[SeriesKey, DemandSeries], DatasetVersion]:
    """Load the demand CSV into one gap-filled series per (country, part).

    Gaps between a key's first and last period are materialized as
    zero-actual observations so intermittent models see an explicit
    zero/non-zero timeline. Duplicate (key, period) rows, negative values,
    and malformed rows are hard errors with the line number.
    """
    path = Path(path)
    canonical = canonicalize_bytes(path.read_bytes())
    reader = csv.DictReader(io.StringIO(canonical.decode("utf-8")))
    if reader.fieldnames != DEMAND_HEADER:
        raise IngestError(
            f"demand header must be {','.join(DEMAND_HEADER)}, "
            f"got {reader.fieldnames}"
        )

    rows: dict[SeriesKey, dict[PeriodId, MonthlyObservation]] = {}
    count = 0
    for line_no, row in enumerate(reader, start=2):
        count += 1
        period = _parse_period(row, line_no)
        try:
            key = SeriesKey(row["country"], row["part"])
            actuals = float(row["actuals"])
            revenue = float(row["revenue"])
            price_txt = (row.get("price") or "").strip()
            price = float(price_txt) if price_txt else None
        except (TypeError, ValueError) as exc:
            raise IngestError(f"line {line_no}: malformed row ({exc})") from exc
        if actuals < 0 or revenue < 0:
            raise IngestError(f"line {line_no}: negative value")
        per_key = rows.setdefault(key, {})
        if period in per_key:
            raise IngestError(
                f"line {line_no}: duplicate observation for {key} at {period}"
            )
        per_key[period] = MonthlyObservation(period, actuals, revenue, price)

    series: dict[SeriesKey, DemandSeries] = {}
    for key in sorted(rows):
        by_period = rows[key]
        first = min(by_period)
        last = max(by_period)
        observations = []
        p = first
        while p <= last:
            obs = by_period.get(p) or MonthlyObservation(p, 0.0, 0.0, None)
            observations.append(obs)
            p = p.succ()
        series[key] = DemandSeries(key, tuple(observations))

    ds_id = dataset_id or path.stem
    return series, _version(ds_id, canonical, count)


def load_exogenous_csv(
    path: str | Path, dataset_id: Optional[str] = None
) -> ExogenousLoad:
    """Load exogenous frames grouped by country.

    Unknown regime or lifecycle strings and malformed periods are hard
    errors. Internal inconsistencies (months_since_regime_start that
    contradicts an observed regime transition) are reported as defects.
    """
    path = Path(path)
    canonical = canonicalize_bytes(path.read_bytes())
    reader = csv.DictReader(io.StringIO(canonical.decode("utf-8")))
    if reader.fieldnames != EXOG_HEADER:
        raise IngestError(
            f"exogenous header must be {','.join(EXOG_HEADER)}, "
            f"got {reader.fieldnames}"
        )

    raw: dict[str, dict[PeriodId, ExogenousFrame]] = {}
    count = 0
    for line_no, row in enumerate(reader, start=2):
        count += 1
        period = _parse_period(row, line_no)
        regime = (row["regime"] or "").strip()
        if regime not in REGIMES:
            raise IngestError(f"line {line_no}: unknown regime {regime!r}")
        lifecycle = (row["lifecycle"] or "").strip()
        if lifecycle not in LIFECYCLES:
            raise IngestError(f"line {line_no}: unknown lifecycle {lifecycle!r}")
        try:
            frame = ExogenousFrame(
                period=period,
                regime=regime,
                months_since_regime_start=int(row["months_since_regime_start"]),
                lifecycle=lifecycle,
                holiday_count=int(row["holiday_count"]),
                macro_index=float(row["macro_index"]),
            )
        except (TypeError, ValueError) as exc:
            raise IngestError(f"line {line_no}: malformed row ({exc})") from exc
        per_country = raw.setdefault(row["country"], {})
        if period in per_country:
            raise IngestError(
                f"line {line_no}: duplicate frame for {row['country']} at {period}"
            )
        per_country[period] = frame

    defects: list[Defect] = []
    frames_by_country: dict[str, list[ExogenousFrame]] = {}
    for country in sorted(raw):
        frames = [raw[country][p] for p in sorted(raw[country])]
        frames_by_country[country] = frames
        prev: Optional[ExogenousFrame] = None
        for frame in frames:
            changed = (
                prev is None
                or prev.period.succ() != frame.period
                or prev.regime != frame.regime
            )
            should_be_zero = changed or frame.regime == "none"
            is_zero = frame.months_since_regime_start == 0
            if should_be_zero != is_zero:
                defects.append(
                    Defect(
                        "regime_clock",
                        f"{country} {frame.period}: months_since_regime_start="
                        f"{frame.months_since_regime_start} inconsistent with "
                        f"regime {frame.regime!r}",
                    )
                )
            prev = frame

    ds_id = dataset_id or path.stem
    return ExogenousLoad(frames_by_country, _version(ds_id, canonical, count), defects)
