"""Seeded synthetic demo dataset.

Three markets, forty parts across eight product families, four years of
monthly history. A demand shock hits the wear-part families in 2021-03
for six months, followed by a six month recovery window; the exogenous
regime calendar carries the same story so trend attribution has ground
truth to point at. Revenue is deliberately Pareto-skewed: part volumes
follow a Zipf profile so a small head of the catalog dominates.

Everything is a pure function of the seed, so two runs emit identical
bytes.
"""

from __future__ import annotations

import csv
import io
import math
import zlib

import numpy as np

from .ingest import DEMAND_HEADER, EXOG_HEADER, canonicalize_bytes
from .serialize import hash_bytes
from .store import ArtifactStore

COUNTRIES = ("DE", "FR", "PL")
COUNTRY_SCALE = {"DE": 1.0, "FR": 0.8, "PL": 0.55}
COUNTRY_PRICE = {"DE": 1.0, "FR": 1.02, "PL": 0.96}

FAMILIES = ("BRK", "FLT", "BAT", "CLU", "SUS", "ELC", "BOD", "LGT")
FAMILY_PRICE = {
    "BRK": 80.0,
    "FLT": 25.0,
    "BAT": 150.0,
    "CLU": 320.0,
    "SUS": 210.0,
    "ELC": 95.0,
    "BOD": 540.0,
    "LGT": 60.0,
}
# Wear parts: these spike when the shock hits the installed base.
SENSITIVE = frozenset({"BRK", "FLT", "CLU", "SUS"})
SEASONAL = frozenset({"BAT", "LGT"})

N_MONTHS = 48
START_YEAR, START_MONTH = 2019, 1
SHOCK_FIRST, SHOCK_LAST = 27, 32  # 1-based month index, 2021-03..2021-08
RECOVERY_LAST = 38
SHOCK_DEMAND = 2.2
RECOVERY_DEMAND = 1.15
SHOCK_SURCHARGE = 1.12

HOLIDAYS = (2, 0, 1, 1, 2, 0, 0, 1, 0, 0, 1, 3)

PATTERNS = ("smooth", "erratic", "intermittent", "lumpy")


def part_catalog() -> list[tuple[str, str]]:
    """(part_id, family) pairs; five parts per family, ids global."""
    parts = []
    idx = 1
    for fam in FAMILIES:
        for _ in range(5):
            parts.append((f"{fam}-{idx:04d}", fam))
            idx += 1
    return parts


def _calendar(m: int) -> tuple[int, int]:
    total = (START_YEAR * 12 + START_MONTH - 1) + (m - 1)
    return total // 12, total % 12 + 1


def _season(fam: str, cal_month: int) -> float:
    if fam not in SEASONAL:
        return 1.0
    return 1.0 + 0.45 * math.cos(2.0 * math.pi * (cal_month - 1) / 12.0)


def _shock_factor(fam: str, m: int) -> float:
    if fam not in SENSITIVE:
        return 1.0
    if SHOCK_FIRST <= m <= SHOCK_LAST:
        return SHOCK_DEMAND
    if SHOCK_LAST < m <= RECOVERY_LAST:
        return RECOVERY_DEMAND
    return 1.0


def _series_rng(seed: int, country: str, part: str) -> np.random.Generator:
    tag = f"{seed}:{country}:{part}".encode()
    return np.random.default_rng(zlib.crc32(tag))


def _demand_path(
    rng: np.random.Generator, pattern: str, level: float, fam: str
) -> np.ndarray:
    months = np.arange(1, N_MONTHS + 1)
    season = np.array([_season(fam, _calendar(int(m))[1]) for m in months])
    if pattern == "smooth":
        base = level * season * (1.0 + 0.08 * rng.standard_normal(N_MONTHS))
        y = np.maximum(base, 1.0)
    elif pattern == "erratic":
        base = level * season * (1.0 + 0.50 * rng.standard_normal(N_MONTHS))
        y = np.maximum(base, 0.0)
    elif pattern == "intermittent":
        hit = rng.random(N_MONTHS) < 0.34
        size = level * (1.0 + 0.15 * rng.standard_normal(N_MONTHS))
        y = np.where(hit, np.maximum(size, 1.0), 0.0)
    else:  # lumpy
        hit = rng.random(N_MONTHS) < 0.30
        size = level * np.exp(0.7 * rng.standard_normal(N_MONTHS))
        y = np.where(hit, np.maximum(size, 1.0), 0.0)
    shock = np.array([_shock_factor(fam, int(m)) for m in months])
    y = np.rint(y * shock)
    # keep the series alive at both ends so every key spans the full window
    if y[0] <= 0:
        y[0] = max(1.0, round(level * 0.5))
    if y[-1] <= 0:
        y[-1] = max(1.0, round(level * 0.5))
    return y


def _price_path(base: float, fam: str) -> np.ndarray:
    prices = np.full(N_MONTHS, base)
    if fam in SENSITIVE:
        sl = slice(SHOCK_FIRST - 1, SHOCK_LAST)
        prices[sl] = base * SHOCK_SURCHARGE
    return np.round(prices, 2)


def build_demand_csv(seed: int = 42) -> bytes:
    parts = part_catalog()
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(DEMAND_HEADER)
    for country in COUNTRIES:
        for i, (part, fam) in enumerate(parts):
            idx = i + 1
            pattern = PATTERNS[i % 4]
            level = 200.0 * idx**-1.5 * COUNTRY_SCALE[country]
            level = max(level, 2.0)
            base_price = FAMILY_PRICE[fam] * COUNTRY_PRICE[country]
            base_price *= 1.0 + ((idx * 37) % 9) / 40.0
            rng = _series_rng(seed, country, part)
            units = _demand_path(rng, pattern, level, fam)
            prices = _price_path(base_price, fam)
            for m in range(1, N_MONTHS + 1):
                year, cal = _calendar(m)
                u = units[m - 1]
                if u > 0:
                    price = prices[m - 1]
                    rev = round(float(u) * float(price), 2)
                    row = [country, part, year, cal, int(u), f"{rev:.2f}",
                           f"{price:.2f}"]
                else:
                    row = [country, part, year, cal, 0, "0.00", ""]
                writer.writerow(row)
    return out.getvalue().encode("utf-8")


def build_exogenous_csv(seed: int = 42) -> bytes:
    del seed  # calendar is fixed; kept for signature symmetry
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(EXOG_HEADER)
    for country in COUNTRIES:
        dip = {"DE": 0.0, "FR": 1.5, "PL": 3.0}[country]
        for m in range(1, N_MONTHS + 1):
            year, cal = _calendar(m)
            if SHOCK_FIRST <= m <= SHOCK_LAST:
                regime = "shock"
                clock = m - SHOCK_FIRST
            elif SHOCK_LAST < m <= RECOVERY_LAST:
                regime = "recovery"
                clock = m - SHOCK_LAST - 1
            else:
                regime = "none"
                clock = 0
            macro = 100.0 - dip + 2.0 * math.sin(2.0 * math.pi * m / 24.0)
            if regime == "shock":
                macro -= 10.0 + 1.5 * clock
            elif regime == "recovery":
                macro -= 8.0 - 1.5 * clock
            writer.writerow(
                [country, year, cal, regime, clock, "mature",
                 HOLIDAYS[cal - 1], f"{macro:.2f}"]
            )
    return out.getvalue().encode("utf-8")


def register_demo(
    store: ArtifactStore, dataset_id: str = "demo", seed: int = 42
) -> tuple[str, str]:
    """Generate the demo dataset and register it; returns content hashes."""
    demand = build_demand_csv(seed)
    exog = build_exogenous_csv(seed)
    demand_hash = hash_bytes(canonicalize_bytes(demand))
    exog_hash = hash_bytes(canonicalize_bytes(exog))
    store.register_dataset(dataset_id, demand, exog, demand_hash, exog_hash)
    return demand_hash, exog_hash
