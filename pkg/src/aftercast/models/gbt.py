"""Gradient-boosted regression trees, written from scratch on numpy.

Trees use exact greedy variance-reduction splits over presorted feature
columns. Boosting starts from F_0 = 0, so a single depth-0 tree predicts
the target mean shrunk by the learning rate. Everything is deterministic:
ties in split gain resolve to the lowest feature index, then the lowest
threshold.

The global demand model trains one booster per step ahead on rows pooled
across series: lags 1/2/3/6/12, rolling 3- and 12-month means, calendar
month, regime one-hots, months since regime start, cluster id, and price
band ordinal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import DemandSeries, ExogenousFrame, ForecastPoint, ForecastSet, SeriesKey

FEATURE_NAMES = (
    "lag_1",
    "lag_2",
    "lag_3",
    "lag_6",
    "lag_12",
    "roll_3",
    "roll_12",
    "month",
    "regime_shock",
    "regime_restriction",
    "regime_recovery",
    "months_since_regime_start",
    "cluster_id",
    "price_band",
)
_LAGS = (1, 2, 3, 6, 12)
MIN_T = 11  # first 0-based index with lag_12 and roll_12 available


@dataclass
class _Node:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: Optional["_Node"] = None
    right: Optional["_Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


class RegressionTree:
    """Depth-limited CART regression tree with exact greedy splits."""

    def __init__(self, max_depth: int = 3, min_samples_leaf: int = 5):
        if max_depth < 0 or min_samples_leaf < 1:
            raise ValueError("invalid tree parameters")
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.root: Optional[_Node] = None

    def fit(
        self, X: np.ndarray, y: np.ndarray, sorted_idx: Optional[np.ndarray] = None
    ) -> "RegressionTree":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if sorted_idx is None:
            sorted_idx = np.argsort(X, axis=0, kind="stable").T
        self._X, self._y = X, y
        # filled leaf-by-leaf during the build, so boosting never needs a
        # full predict pass over the training matrix
        self.train_pred = np.empty(X.shape[0])
        self.root = self._build(np.asarray(sorted_idx), depth=0)
        del self._X, self._y
        return self

    def _build(self, idx: np.ndarray, depth: int) -> _Node:
        """idx is (n_features, n_node): node rows in per-feature sort order."""
        rows = idx[0]
        node = _Node(value=float(self._y[rows].mean()))
        n = rows.size
        if depth >= self.max_depth or n < 2 * self.min_samples_leaf:
            self.train_pred[rows] = node.value
            return node

        d = idx.shape[0]
        xs = self._X[idx, np.arange(d)[:, None]]
        prefix = np.cumsum(self._y[idx], axis=1)
        total = prefix[:, -1:]
        i = np.arange(1, n)
        # Split between positions i-1 and i; only where the feature value
        # actually changes and both sides satisfy the leaf floor.
        valid = xs[:, 1:] > xs[:, :-1]
        valid &= (i >= self.min_samples_leaf) & ((n - i) >= self.min_samples_leaf)
        left_sum = prefix[:, :-1]
        gain = (
            left_sum**2 / i
            + (total - left_sum) ** 2 / (n - i)
            - total**2 / n
        )
        gain[~valid] = -np.inf
        # row-major argmax: ties resolve to lowest feature, lowest threshold
        flat = int(np.argmax(gain))
        j, pos = divmod(flat, n - 1)
        if not gain[j, pos] > 1e-12:
            self.train_pred[rows] = node.value
            return node
        node.feature = int(j)
        node.threshold = float((xs[j, pos] + xs[j, pos + 1]) / 2.0)

        left_mask = np.zeros(self._X.shape[0], dtype=bool)
        go_left = self._X[rows, node.feature] <= node.threshold
        left_mask[rows[go_left]] = True
        mask = left_mask[idx]
        n_left = int(go_left.sum())
        node.left = self._build(idx[mask].reshape(d, n_left), depth + 1)
        node.right = self._build(idx[~mask].reshape(d, n - n_left), depth + 1)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(X.shape[0])
        self._predict_into(self.root, X, np.arange(X.shape[0]), out)
        return out

    def _predict_into(self, node, X, rows, out):
        if node.is_leaf:
            out[rows] = node.value
            return
        go_left = X[rows, node.feature] <= node.threshold
        self._predict_into(node.left, X, rows[go_left], out)
        self._predict_into(node.right, X, rows[~go_left], out)


class GradientBoostedTrees:
    """Squared-error (or optionally Huber) boosting from F_0 = 0."""

    def __init__(
        self,
        n_trees: int = 200,
        max_depth: int = 3,
        learning_rate: float = 0.1,
        min_samples_leaf: int = 5,
        huber: bool = False,
        huber_delta: float = 1.0,
    ):
        if n_trees < 1 or not 0.0 < learning_rate <= 1.0:
            raise ValueError("invalid boosting parameters")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_samples_leaf = min_samples_leaf
        self.huber = huber
        self.huber_delta = huber_delta
        self.trees: list[RegressionTree] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoostedTrees":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.size == 0:
            raise ValueError("empty training matrix")
        sorted_idx = np.argsort(X, axis=0, kind="stable").T
        current = np.zeros_like(y)
        self.trees = []
        for _ in range(self.n_trees):
            residual = y - current
            if self.huber:
                residual = np.clip(residual, -self.huber_delta, self.huber_delta)
            if np.abs(residual).max() < 1e-12:
                break
            tree = RegressionTree(self.max_depth, self.min_samples_leaf)
            tree.fit(X, residual, sorted_idx)
            current += self.learning_rate * tree.train_pred
            self.trees.append(tree)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out


# -- global demand model -------------------------------------------------------


@dataclass(frozen=True)
class GbtSeriesInput:
    """One series' training slice plus its segment descriptors."""

    key: SeriesKey
    series: DemandSeries
    frames: list[ExogenousFrame]
    cluster_id: int = 0
    price_band_ordinal: int = 1


def feature_row(
    values: list[float],
    t: int,
    frame: ExogenousFrame,
    month: int,
    cluster_id: int,
    price_band_ordinal: int,
) -> list[float]:
    """Features known at index t (0-based, t >= 11)."""
    row = [values[t - (k - 1)] for k in _LAGS]
    row.append(float(np.mean(values[t - 2 : t + 1])))
    row.append(float(np.mean(values[t - 11 : t + 1])))
    row.append(float(month))
    row.extend(
        1.0 if frame.regime == r else 0.0
        for r in ("shock", "restriction", "recovery")
    )
    row.append(float(frame.months_since_regime_start))
    row.append(float(cluster_id))
    row.append(float(price_band_ordinal))
    return row


class GbtGlobal:
    """One booster per step ahead, trained on rows pooled across series."""

    def __init__(self, steps: list[int], **boost_params):
        self.steps = sorted(set(int(s) for s in steps))
        self.boost_params = boost_params
        self.models: dict[int, GradientBoostedTrees] = {}
        self._pred_rows: dict[SeriesKey, list[float]] = {}
        self._origins: dict[SeriesKey, object] = {}

    def fit(self, inputs: list[GbtSeriesInput]) -> "GbtGlobal":
        rows: list[list[float]] = []
        targets: dict[int, list[float]] = {s: [] for s in self.steps}
        row_valid: dict[int, list[int]] = {s: [] for s in self.steps}
        for item in inputs:
            values = item.series.actuals
            periods = item.series.periods
            by_period = {f.period: f for f in item.frames}
            for t in range(MIN_T, len(values)):
                frame = by_period.get(periods[t]) or ExogenousFrame(
                    period=periods[t]
                )
                row = feature_row(
                    values,
                    t,
                    frame,
                    periods[t].month,
                    item.cluster_id,
                    item.price_band_ordinal,
                )
                row_id = len(rows)
                rows.append(row)
                for s in self.steps:
                    if t + s < len(values):
                        targets[s].append(values[t + s])
                        row_valid[s].append(row_id)
            # Prediction row: features at the final training index.
            t_last = len(values) - 1
            if t_last >= MIN_T:
                frame = by_period.get(periods[t_last]) or ExogenousFrame(
                    period=periods[t_last]
                )
                self._pred_rows[item.key] = feature_row(
                    values,
                    t_last,
                    frame,
                    periods[t_last].month,
                    item.cluster_id,
                    item.price_band_ordinal,
                )
                self._origins[item.key] = item.series.last_period

        X = np.asarray(rows, dtype=float)
        for s in self.steps:
            if not row_valid[s]:
                raise ValueError(f"no training rows for step {s}")
            self.models[s] = GradientBoostedTrees(**self.boost_params).fit(
                X[row_valid[s]], np.asarray(targets[s])
            )
        return self

    def can_forecast(self, key: SeriesKey) -> bool:
        return key in self._pred_rows

    def forecast_steps(self, key: SeriesKey) -> ForecastSet:
        if key not in self._pred_rows:
            raise ValueError(f"series {key} too short for feature window")
        row = np.asarray([self._pred_rows[key]])
        points = []
        for s in self.steps:
            value = max(0.0, float(self.models[s].predict(row)[0]))
            points.append(
                ForecastPoint(horizon=s, point=value, lower=value, upper=value)
            )
        return ForecastSet(key, self._origins[key], tuple(points), "gbt")
