"""Canonical domain types, period arithmetic, and series validation.

Everything here is immutable and pure: construction never normalizes or
repairs data, so defective inputs stay observable for ``validate_series``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

MAX_HORIZON_DEFAULT = 18

REGIMES = ("none", "shock", "restriction", "recovery")
LIFECYCLES = ("launch", "growth", "mature", "decline", "obsolete")


class Regime(str, Enum):
    NONE = "none"
    SHOCK = "shock"
    RESTRICTION = "restriction"
    RECOVERY = "recovery"


class Lifecycle(str, Enum):
    LAUNCH = "launch"
    GROWTH = "growth"
    MATURE = "mature"
    DECLINE = "decline"
    OBSOLETE = "obsolete"


@dataclass(frozen=True, order=True)
class PeriodId:
    """A calendar month. Totally ordered; successor/predecessor cross year
    boundaries."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @property
    def index(self) -> int:
        """Months since year 0, for arithmetic."""
        return self.year * 12 + (self.month - 1)

    @classmethod
    def from_index(cls, idx: int) -> "PeriodId":
        return cls(idx // 12, idx % 12 + 1)

    def succ(self) -> "PeriodId":
        return PeriodId.from_index(self.index + 1)

    def pred(self) -> "PeriodId":
        return PeriodId.from_index(self.index - 1)

    def plus(self, months: int) -> "PeriodId":
        return PeriodId.from_index(self.index + months)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"

    @classmethod
    def parse(cls, text: str) -> "PeriodId":
        year, _, month = text.partition("-")
        return cls(int(year), int(month))


@dataclass(frozen=True, order=True)
class SeriesKey:
    """(country, part) identity of one demand series."""

    country: str
    part: str

    def __post_init__(self):
        if not self.country or not self.part:
            raise ValueError("country and part must be non-empty")

    def __str__(self) -> str:
        return f"{self.country}/{self.part}"


@dataclass(frozen=True)
class MonthlyObservation:
    period: PeriodId
    actuals: float
    revenue: float
    price: Optional[float] = None


@dataclass(frozen=True)
class DemandSeries:
    """Monthly history for one key. Periods are expected to be strictly
    increasing and contiguous; violations are reported by
    ``validate_series``, not rejected here."""

    key: SeriesKey
    observations: tuple[MonthlyObservation, ...]

    def __post_init__(self):
        if len(self.observations) < 1:
            raise ValueError("series must contain at least one observation")
        if not isinstance(self.observations, tuple):
            object.__setattr__(self, "observations", tuple(self.observations))

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def periods(self) -> list[PeriodId]:
        return [o.period for o in self.observations]

    @property
    def actuals(self) -> list[float]:
        return [o.actuals for o in self.observations]

    @property
    def last_period(self) -> PeriodId:
        return self.observations[-1].period

    def truncate(self, through: PeriodId) -> "DemandSeries":
        """Sub-series of observations with period <= through."""
        kept = tuple(o for o in self.observations if o.period <= through)
        if not kept:
            raise ValueError(f"no observations at or before {through}")
        return DemandSeries(self.key, kept)


@dataclass(frozen=True)
class ExogenousFrame:
    """Per-period exogenous context for one country."""

    period: PeriodId
    regime: str = "none"
    months_since_regime_start: int = 0
    lifecycle: str = "mature"
    holiday_count: int = 0
    macro_index: float = 0.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.lifecycle not in LIFECYCLES:
            raise ValueError(f"unknown lifecycle {self.lifecycle!r}")
        if self.months_since_regime_start < 0:
            raise ValueError("months_since_regime_start must be >= 0")


@dataclass(frozen=True)
class Horizon:
    h: int

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("horizon must be >= 1")
        if self.h > MAX_HORIZON_DEFAULT:
            raise ValueError(f"horizon {self.h} exceeds max {MAX_HORIZON_DEFAULT}")


@dataclass(frozen=True)
class ForecastPoint:
    horizon: int
    point: float
    lower: float
    upper: float
    interval_level: float = 0.8

    def __post_init__(self):
        if not (0.0 < self.interval_level < 1.0):
            raise ValueError("interval_level must be in (0,1)")
        if self.point < 0 or self.lower < 0:
            raise ValueError("point and lower bound must be non-negative")
        if not (self.lower <= self.point <= self.upper):
            raise ValueError(
                f"require lower <= point <= upper, got "
                f"({self.lower}, {self.point}, {self.upper})"
            )


@dataclass(frozen=True)
class ForecastSet:
    key: SeriesKey
    origin: PeriodId
    points: tuple[ForecastPoint, ...]
    model_id: str

    def __post_init__(self):
        if not isinstance(self.points, tuple):
            object.__setattr__(self, "points", tuple(self.points))
        hs = [p.horizon for p in self.points]
        if sorted(set(hs)) != hs:
            raise ValueError("horizons must be distinct and ascending")

    def point_at(self, horizon: int) -> ForecastPoint:
        for p in self.points:
            if p.horizon == horizon:
                return p
        raise KeyError(f"no forecast at horizon {horizon}")


@dataclass(frozen=True)
class Defect:
    """A data-quality finding. Defects are data, not failures."""

    code: str
    message: str

    def __str__(self) -> str:
        return self.message


def validate_series(series: DemandSeries) -> list[Defect]:
    """Check a series against the domain invariants.

    Reports, without mutating the input:

    * gaps and out-of-order periods (contiguity),
    * negative actuals or revenue,
    * a price recorded on a zero-demand period.

    Returns an empty list when the series is clean.
    """
    defects: list[Defect] = []
    prev: Optional[PeriodId] = None
    for obs in series.observations:
        if prev is not None:
            expected = prev.succ()
            if obs.period <= prev:
                defects.append(
                    Defect("order", f"period {obs.period} not after {prev}")
                )
            else:
                gap = expected
                while gap < obs.period:
                    defects.append(Defect("gap", f"gap at {gap}"))
                    gap = gap.succ()
        if obs.actuals < 0:
            defects.append(
                Defect("negative", f"negative actuals at {obs.period}")
            )
        if obs.revenue < 0:
            defects.append(
                Defect("negative", f"negative revenue at {obs.period}")
            )
        if obs.actuals == 0 and obs.price is not None:
            defects.append(
                Defect(
                    "price_on_zero",
                    f"price on zero-demand period {obs.period}",
                )
            )
        prev = obs.period
    return defects


def align_frames(
    series: DemandSeries, exog: Iterable[ExogenousFrame]
) -> list[tuple[MonthlyObservation, ExogenousFrame]]:
    """Pair each observation with its exogenous frame.

    Frames are matched by period. A missing frame is synthesized with
    regime ``none``, lifecycle ``mature``, and the macro index carried
    forward from the latest earlier frame (0.0 when none exists). Output
    length always equals the series length.
    """
    by_period = {f.period: f for f in exog}
    ordered = sorted(by_period)
    pairs: list[tuple[MonthlyObservation, ExogenousFrame]] = []
    for obs in series.observations:
        frame = by_period.get(obs.period)
        if frame is None:
            macro = 0.0
            for p in ordered:
                if p < obs.period:
                    macro = by_period[p].macro_index
                else:
                    break
            frame = ExogenousFrame(period=obs.period, macro_index=macro)
        pairs.append((obs, frame))
    return pairs
