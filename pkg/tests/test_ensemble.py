import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aftercast.core import ForecastPoint, ForecastSet, PeriodId, SeriesKey
from aftercast.ensemble import (
    EnsembleWeights,
    IntervalCalibration,
    apply_calibration,
    calibrate_intervals,
    combine,
    drift_check,
    learn_weights,
    project_to_simplex,
)

sys.path.insert(0, str(Path(__file__).parent / "oracles"))
from weights_oracle import grid_search, wmape_of  # noqa: E402

KEY = SeriesKey("DE", "P-1")
ORIGIN = PeriodId(2021, 12)


def as_rows(actuals, **model_forecasts):
    """Zip per-model forecast lists into learn_weights row dicts."""
    ids = sorted(model_forecasts)
    return [
        (a, {m: model_forecasts[m][i] for m in ids})
        for i, a in enumerate(actuals)
    ]


def oracle_rows(rows, ids):
    return [(a, [f[m] for m in ids]) for a, f in rows]


def mk_fs(points_by_horizon, model_id="m", level=0.8):
    pts = tuple(
        ForecastPoint(horizon=h, point=p, lower=p, upper=p, interval_level=level)
        for h, p in sorted(points_by_horizon.items())
    )
    return ForecastSet(KEY, ORIGIN, pts, model_id)


# -- weight learning ---------------------------------------------------------


def test_zero_error_model_takes_all_weight():
    actuals = [10.0, 25.0, 5.0, 40.0]
    rows = as_rows(actuals, good=list(actuals), bad=[a + 7 for a in actuals])
    w = learn_weights(rows, ["good", "bad"])
    assert w.weights == {"good": 1.0, "bad": 0.0}
    assert w.wmape == 0.0


def test_identical_models_tie_break_lexicographic():
    actuals = [10.0, 20.0]
    fcst = [12.0, 17.0]
    rows = as_rows(actuals, beta=list(fcst), alpha=list(fcst))
    w = learn_weights(rows, ["beta", "alpha"])
    assert w.weights == {"alpha": 1.0, "beta": 0.0}


def test_opposite_bias_models_split_evenly():
    actuals = [30.0, 50.0, 20.0, 40.0]
    rows = as_rows(
        actuals,
        over=[a + 10 for a in actuals],
        under=[a - 10 for a in actuals],
    )
    w = learn_weights(rows, ["over", "under"])
    assert w.weights["over"] == pytest.approx(0.5)
    assert w.weights["under"] == pytest.approx(0.5)
    assert w.wmape == pytest.approx(0.0, abs=1e-12)
    oracle_w, oracle_loss = grid_search(
        oracle_rows(rows, ["over", "under"]), 2, step=0.01
    )
    assert oracle_w == (0.5, 0.5)
    assert w.wmape <= oracle_loss + 1e-12


def test_three_models_match_grid_oracle():
    rng = np.random.default_rng(17)
    actuals = rng.uniform(5, 60, size=24)
    rows = as_rows(
        list(actuals),
        a=list(actuals + rng.normal(0, 6, 24)),
        b=list(actuals * 1.15),
        c=list(np.maximum(0.0, actuals + rng.normal(2, 3, 24))),
    )
    w = learn_weights(rows, ["a", "b", "c"])
    _, oracle_loss = grid_search(oracle_rows(rows, ["a", "b", "c"]), 3, step=0.01)
    assert abs(w.wmape - oracle_loss) <= 0.01
    # solver enumerates the same grid, so it cannot do worse at all
    assert w.wmape <= oracle_loss + 1e-12


def test_four_models_within_tolerance_of_fine_oracle():
    rng = np.random.default_rng(29)
    actuals = rng.uniform(10, 50, size=20)
    rows = as_rows(
        list(actuals),
        a=list(actuals + rng.normal(0, 5, 20)),
        b=list(actuals - 4.0),
        c=list(actuals * 1.2),
        d=list(np.maximum(0.0, actuals + rng.normal(-1, 8, 20))),
    )
    ids = ["a", "b", "c", "d"]
    w = learn_weights(rows, ids)
    _, coarse = grid_search(oracle_rows(rows, ids), 4, step=0.05)
    assert w.wmape <= coarse + 1e-12


def test_five_models_subgradient_beats_coarse_oracle():
    rng = np.random.default_rng(41)
    actuals = rng.uniform(10, 50, size=30)
    noise = {m: rng.normal(0, 4, 30) for m in "abcde"}
    rows = as_rows(
        list(actuals), **{m: list(actuals + noise[m]) for m in "abcde"}
    )
    ids = list("abcde")
    w = learn_weights(rows, ids)
    _, coarse = grid_search(oracle_rows(rows, ids), 5, step=0.2)
    assert w.wmape <= coarse + 0.01
    assert sum(w.weights.values()) == pytest.approx(1.0, abs=1e-9)


def test_ensemble_never_worse_than_best_member():
    rng = np.random.default_rng(7)
    actuals = rng.uniform(0, 40, size=18)
    rows = as_rows(
        list(actuals),
        a=list(np.maximum(0.0, actuals + rng.normal(0, 3, 18))),
        b=list(np.maximum(0.0, actuals + rng.normal(1, 6, 18))),
        c=list(actuals * 0.8),
    )
    ids = ["a", "b", "c"]
    w = learn_weights(rows, ids)
    o_rows = oracle_rows(rows, ids)
    for j, m in enumerate(ids):
        vertex = tuple(1.0 if i == j else 0.0 for i in range(3))
        assert w.wmape <= wmape_of(vertex, o_rows) + 1e-12


def test_incomplete_rows_are_dropped():
    rows = [(10.0, {"a": 30.0, "b": 10.0}) for _ in range(4)]
    rows += [(10.0, {"a": 10.0})] * 3  # a only looks perfect here
    w = learn_weights(rows, ["a", "b"])
    assert w.n_rows == 4
    assert w.weights == {"a": 0.0, "b": 1.0}


def test_no_complete_rows_raises():
    rows = [(5.0, {"a": 4.0}), (6.0, {"b": 6.0})]
    with pytest.raises(ValueError, match="complete"):
        learn_weights(rows, ["a", "b"])


def test_all_zero_actuals_minimizes_absolute_error():
    rows = as_rows([0.0, 0.0, 0.0], a=[0.0, 0.0, 0.0], b=[5.0, 5.0, 5.0])
    w = learn_weights(rows, ["a", "b"])
    assert w.weights == {"a": 1.0, "b": 0.0}
    assert w.wmape == 0.0


def test_single_model_gets_weight_one():
    rows = as_rows([3.0, 4.0], only=[2.0, 5.0])
    w = learn_weights(rows, ["only"])
    assert w.weights == {"only": 1.0}


@settings(max_examples=40, deadline=None)
@given(
    n_models=st.integers(2, 5),
    data=st.data(),
)
def test_simplex_invariant_holds(n_models, data):
    n_rows = data.draw(st.integers(3, 12))
    actuals = data.draw(
        st.lists(
            st.floats(0, 100, allow_nan=False), min_size=n_rows, max_size=n_rows
        )
    )
    ids = [f"m{i}" for i in range(n_models)]
    forecasts = {
        m: data.draw(
            st.lists(
                st.floats(0, 100, allow_nan=False),
                min_size=n_rows,
                max_size=n_rows,
            )
        )
        for m in ids
    }
    w = learn_weights(as_rows(actuals, **forecasts), ids)
    assert all(v >= 0.0 for v in w.weights.values())
    assert sum(w.weights.values()) == pytest.approx(1.0, abs=1e-9)
    o_rows = oracle_rows(as_rows(actuals, **forecasts), sorted(ids))
    for j in range(n_models):
        vertex = tuple(1.0 if i == j else 0.0 for i in range(n_models))
        assert w.wmape <= wmape_of(vertex, o_rows) + 1e-9


def test_weights_validation_rejects_bad_simplex():
    with pytest.raises(ValueError):
        EnsembleWeights("s", 1, {"a": 0.7, "b": 0.7}, 4, 0.1)
    with pytest.raises(ValueError):
        EnsembleWeights("s", 1, {"a": 1.5, "b": -0.5}, 4, 0.1)


def test_projection_lands_on_simplex():
    rng = np.random.default_rng(3)
    for _ in range(50):
        v = rng.normal(0, 5, size=rng.integers(2, 8))
        p = project_to_simplex(v)
        assert p.min() >= 0.0
        assert p.sum() == pytest.approx(1.0, abs=1e-9)


# -- combination -------------------------------------------------------------


def test_unit_weight_reproduces_member_exactly():
    a = mk_fs({1: 10.0, 2: 11.0}, "a")
    b = mk_fs({1: 99.0, 2: 99.0}, "b")
    out = combine(
        {"a": a, "b": b},
        {1: {"a": 1.0, "b": 0.0}, 2: {"a": 1.0, "b": 0.0}},
    )
    assert out.model_id == "ensemble"
    assert out.point_at(1).point == 10.0
    assert out.point_at(2).point == 11.0


def test_even_split_averages():
    out = combine(
        {"a": mk_fs({1: 10.0}, "a"), "b": mk_fs({1: 20.0}, "b")},
        {1: {"a": 0.5, "b": 0.5}},
    )
    assert out.point_at(1).point == 15.0


def test_missing_member_with_nonzero_weight_raises():
    with pytest.raises(ValueError, match="missing member"):
        combine({"a": mk_fs({1: 10.0}, "a")}, {1: {"a": 0.4, "b": 0.6}})


def test_missing_member_with_zero_weight_is_fine():
    out = combine({"a": mk_fs({1: 10.0}, "a")}, {1: {"a": 1.0, "b": 0.0}})
    assert out.point_at(1).point == 10.0


@given(
    pa=st.floats(0, 100, allow_nan=False),
    pb=st.floats(0, 100, allow_nan=False),
    wa=st.floats(0, 1, allow_nan=False),
)
def test_combination_respects_convexity_bound(pa, pb, wa):
    out = combine(
        {"a": mk_fs({1: pa}, "a"), "b": mk_fs({1: pb}, "b")},
        {1: {"a": wa, "b": 1.0 - wa}},
    )
    value = out.point_at(1).point
    assert min(pa, pb) - 1e-9 <= value <= max(pa, pb) + 1e-9


def test_mismatched_member_origin_raises():
    a = mk_fs({1: 10.0}, "a")
    shifted = ForecastSet(KEY, ORIGIN.succ(), a.points, "b")
    with pytest.raises(ValueError, match="share key and origin"):
        combine({"a": a, "b": shifted}, {1: {"a": 0.5, "b": 0.5}})


# -- interval calibration -----------------------------------------------------


def test_symmetric_multiset_offsets():
    residuals = [-2.0, -1.0, 0.0, 1.0, 2.0] * 20
    cal = calibrate_intervals({1: residuals}, level=0.8)[1]
    assert cal.lower_offset == pytest.approx(-2.0)
    assert cal.upper_offset == pytest.approx(2.0)
    assert not cal.pooled


def test_all_zero_residuals_collapse_interval():
    cal = calibrate_intervals({1: [0.0] * 30}, level=0.8)[1]
    assert cal.lower_offset == 0.0
    assert cal.upper_offset == 0.0


def test_gaussian_heldout_coverage_near_nominal():
    rng = np.random.default_rng(123)
    train = list(rng.normal(0, 5, size=1000))
    cal = calibrate_intervals({1: train}, level=0.8)[1]
    held_out = rng.normal(0, 5, size=2000)
    covered = np.mean(
        (held_out >= cal.lower_offset) & (held_out <= cal.upper_offset)
    )
    assert abs(covered - 0.80) <= 0.05


def test_higher_level_gives_nested_intervals():
    rng = np.random.default_rng(9)
    residuals = {1: list(rng.normal(0, 3, size=200))}
    lo_by_level = {}
    up_by_level = {}
    for level in (0.5, 0.8, 0.95):
        cal = calibrate_intervals(residuals, level=level)[1]
        lo_by_level[level] = cal.lower_offset
        up_by_level[level] = cal.upper_offset
    assert lo_by_level[0.95] <= lo_by_level[0.8] <= lo_by_level[0.5] <= 0.0
    assert 0.0 <= up_by_level[0.5] <= up_by_level[0.8] <= up_by_level[0.95]


def test_sparse_horizon_pools_across_horizons():
    rich = list(np.linspace(-10, 10, 30))
    sparse = [100.0] * 2  # alone these would give (0, 100)
    cals = calibrate_intervals({1: rich, 2: sparse}, level=0.8)
    assert not cals[1].pooled
    assert cals[2].pooled
    assert cals[2].n_residuals == 32
    # pooled quantiles dominated by the rich horizon, far from 100
    assert cals[2].upper_offset < 100.0


def test_no_residuals_raises():
    with pytest.raises(ValueError, match="no residuals"):
        calibrate_intervals({})


def test_offsets_always_straddle_zero():
    # one-sided residuals still produce a lower offset <= 0
    cal = calibrate_intervals({1: [5.0] * 40}, level=0.8)[1]
    assert cal.lower_offset == 0.0
    assert cal.upper_offset == pytest.approx(5.0)


def test_calibration_validation_rejects_inverted_offsets():
    with pytest.raises(ValueError):
        IntervalCalibration("s", 1, 0.8, 1.0, 2.0, 30)


def test_apply_calibration_widens_and_clamps():
    fs = mk_fs({1: 3.0, 2: 50.0}, "ensemble")
    cals = {
        1: IntervalCalibration("s", 1, 0.8, -10.0, 4.0, 40),
        2: IntervalCalibration("s", 2, 0.8, -10.0, 4.0, 40),
    }
    out = apply_calibration(fs, cals)
    p1 = out.point_at(1)
    assert p1.lower == 0.0  # clamped, 3 - 10 < 0
    assert p1.upper == 7.0
    assert p1.point == 3.0
    p2 = out.point_at(2)
    assert p2.lower == 40.0
    assert p2.upper == 54.0


def test_apply_calibration_leaves_unmapped_horizons_alone():
    fs = mk_fs({1: 5.0, 3: 6.0}, "ensemble")
    out = apply_calibration(
        fs, {1: IntervalCalibration("s", 1, 0.8, -1.0, 1.0, 25)}
    )
    assert out.point_at(3).lower == 6.0
    assert out.point_at(3).upper == 6.0


# -- drift ---------------------------------------------------------------------


def test_identical_windows_no_flag():
    window = [1.0, 2.0, 3.0, 1.0, 2.0, 3.0]
    res = drift_check(window, window)
    assert not res.flagged
    assert res.statistic == 0.0


def test_large_shift_flags():
    rng = np.random.default_rng(2)
    reference = list(rng.normal(0, 1, size=100))
    recent = list(rng.normal(5, 1, size=10))
    res = drift_check(recent, reference)
    assert res.flagged
    assert res.statistic > 2.0


def test_small_shift_does_not_flag():
    # clean hand numbers: sigma_ref = 1, n_recent = 10, threshold 2/sqrt(10)
    reference = [-1.0, 1.0] * 50  # mean 0, sample sd just over 1
    recent = [0.1] * 10
    res = drift_check(recent, reference)
    assert not res.flagged
    assert res.statistic == pytest.approx(
        0.1 / (np.std(reference, ddof=1) / math.sqrt(10))
    )


def test_short_windows_rejected():
    with pytest.raises(ValueError, match="at least 6"):
        drift_check([1.0] * 5, [1.0] * 20)
    with pytest.raises(ValueError, match="at least 6"):
        drift_check([1.0] * 20, [1.0] * 5)


def test_constant_reference_equal_means_is_quiet():
    res = drift_check([4.0] * 8, [4.0] * 12)
    assert not res.flagged
    assert res.statistic == 0.0


def test_constant_reference_shifted_mean_is_infinite():
    res = drift_check([5.0] * 8, [4.0] * 12)
    assert res.flagged
    assert math.isinf(res.statistic)
