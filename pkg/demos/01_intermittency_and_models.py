"""Walkthrough: demand patterns and the intermittent-demand models.

Classifies four synthetic monthly histories by ADI and CV2, then shows how
croston, SBA and TSB react to an intermittent series as history accrues.

Usage:
    python3 demos/01_intermittency_and_models.py
"""

import numpy as np

from aftercast.core import DemandSeries, MonthlyObservation, PeriodId, SeriesKey
from aftercast.models.statistical import croston_family
from aftercast.segmentation import intermittency_profile


def make_series(name, values, start=PeriodId(2021, 1)):
    obs = tuple(
        MonthlyObservation(start.plus(i), float(v), float(v) * 25.0)
        for i, v in enumerate(values)
    )
    return DemandSeries(SeriesKey("DE", name), obs)


def main():
    rng = np.random.default_rng(7)

    print("=== Demand pattern classification ===\n")
    histories = {
        "smooth": 100 + rng.normal(0, 6, 24),
        "erratic": rng.lognormal(4.0, 1.0, 24),
        "intermittent": [8.0 if i % 3 == 0 else 0.0 for i in range(24)],
        "lumpy": [float(rng.lognormal(3.0, 1.2)) if i % 3 == 0 else 0.0
                  for i in range(24)],
    }
    print(f"{'series':14s} {'ADI':>6s} {'CV2':>6s}  classified as")
    for name, values in histories.items():
        profile = intermittency_profile(make_series(f"{name.upper()[:3]}-0001", values))
        print(f"{name:14s} {profile.adi:6.2f} {profile.cv2:6.2f}  {profile.pattern}")

    print("\n=== Croston family on an intermittent series ===\n")
    values = [0, 0, 6, 0, 0, 9, 0, 0, 6, 0, 0, 12, 0, 0, 6, 0, 0, 9]
    print(f"history: {values}")
    print("demand appears every third month, sizes hover around 7-8\n")
    print(f"{'months seen':>12s} {'croston':>9s} {'sba':>9s} {'tsb':>9s}")
    for upto in (6, 9, 12, 15, 18):
        series = make_series("INT-0002", values[:upto])
        row = []
        for variant in ("croston", "sba", "tsb"):
            fs = croston_family(series, steps=[1], variant=variant)
            row.append(fs.point_at(1).point)
        print(f"{upto:12d} {row[0]:9.3f} {row[1]:9.3f} {row[2]:9.3f}")

    print(
        "\nCroston converges near size/interval = 7.7/3; SBA shaves the"
        "\nknown small-sample bias off that; TSB tracks the demand"
        "\nprobability directly, so it reacts when the cadence drifts."
    )


if __name__ == "__main__":
    main()
