"""Minimal feed-forward sequence forecaster with hand-coded backprop.

Input per sample: the last 24 z-normalized observations, a 12-way calendar
month one-hot, and a 3-way regime one-hot (39 features). One tanh hidden
layer, linear output head predicting all requested steps ahead at once
(direct multi-horizon). Training is full-batch-shuffled mini-batch
gradient descent with a fixed seed; normalization is per series, with
denormalized forecasts clamped at 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DemandSeries, ExogenousFrame, ForecastPoint, ForecastSet, SeriesKey

WINDOW = 24
_REGIMES = ("shock", "restriction", "recovery")
INPUT_DIM = WINDOW + 12 + len(_REGIMES)


@dataclass(frozen=True)
class MlpSeriesInput:
    key: SeriesKey
    series: DemandSeries
    frames: list[ExogenousFrame]


def _one_hot(index: int, size: int) -> list[float]:
    row = [0.0] * size
    row[index] = 1.0
    return row


class MlpSeq:
    """Direct multi-horizon MLP over fixed-length windows."""

    def __init__(
        self,
        steps: list[int],
        hidden: int = 32,
        learning_rate: float = 0.01,
        epochs: int = 200,
        batch_size: int = 32,
        seed: int = 42,
    ):
        self.steps = sorted(set(int(s) for s in steps))
        if not self.steps or self.steps[0] < 1:
            raise ValueError("steps must be positive")
        self.n_out = max(self.steps)
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.W1 = rng.normal(0.0, 1.0 / np.sqrt(INPUT_DIM), (INPUT_DIM, hidden))
        self.b1 = np.zeros(hidden)
        self.W2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, self.n_out))
        self.b2 = np.zeros(self.n_out)
        self._rng = rng
        self._stats: dict[SeriesKey, tuple[float, float]] = {}
        self._tails: dict[SeriesKey, tuple[list[float], int, str]] = {}
        self._origins: dict[SeriesKey, object] = {}

    # -- parameter vector plumbing (for gradient checks) ----------------

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [self.W1.ravel(), self.b1, self.W2.ravel(), self.b2]
        )

    def set_params(self, flat: np.ndarray) -> None:
        shapes = [self.W1.shape, self.b1.shape, self.W2.shape, self.b2.shape]
        out = []
        pos = 0
        for shape in shapes:
            size = int(np.prod(shape))
            out.append(flat[pos : pos + size].reshape(shape))
            pos += size
        self.W1, self.b1, self.W2, self.b2 = out

    def forward(self, X: np.ndarray) -> np.ndarray:
        H = np.tanh(X @ self.W1 + self.b1)
        return H @ self.W2 + self.b2

    def loss_and_grad(
        self, X: np.ndarray, Y: np.ndarray
    ) -> tuple[float, np.ndarray]:
        """Mean squared error over all outputs and its analytic gradient."""
        H = np.tanh(X @ self.W1 + self.b1)
        P = H @ self.W2 + self.b2
        diff = P - Y
        loss = float(np.mean(diff**2))
        G = 2.0 * diff / diff.size
        dW2 = H.T @ G
        db2 = G.sum(axis=0)
        dH = G @ self.W2.T
        dZ = dH * (1.0 - H**2)
        dW1 = X.T @ dZ
        db1 = dZ.sum(axis=0)
        return loss, np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])

    # -- data construction ------------------------------------------------

    def _sample_rows(self, item: MlpSeriesInput, mean: float, std: float):
        values = item.series.actuals
        periods = item.series.periods
        by_period = {f.period: f for f in item.frames}
        rows, targets = [], []
        for t in range(WINDOW - 1, len(values) - self.n_out):
            window = [(v - mean) / std for v in values[t - WINDOW + 1 : t + 1]]
            frame = by_period.get(periods[t]) or ExogenousFrame(period=periods[t])
            row = window + _one_hot(periods[t].month - 1, 12)
            row.extend(
                1.0 if frame.regime == r else 0.0 for r in _REGIMES
            )
            rows.append(row)
            targets.append(
                [(values[t + s] - mean) / std for s in range(1, self.n_out + 1)]
            )
        return rows, targets

    def fit(self, inputs: list[MlpSeriesInput]) -> "MlpSeq":
        all_rows, all_targets = [], []
        for item in inputs:
            values = item.series.actuals
            mean = float(np.mean(values))
            std = float(np.std(values)) or 1.0
            self._stats[item.key] = (mean, std)
            rows, targets = self._sample_rows(item, mean, std)
            all_rows.extend(rows)
            all_targets.extend(targets)
            if len(values) >= WINDOW:
                periods = item.series.periods
                by_period = {f.period: f for f in item.frames}
                last = periods[-1]
                frame = by_period.get(last) or ExogenousFrame(period=last)
                self._tails[item.key] = (values[-WINDOW:], last.month, frame.regime)
                self._origins[item.key] = last
        if not all_rows:
            raise ValueError("no training windows of length 24 available")
        X = np.asarray(all_rows)
        Y = np.asarray(all_targets)
        n = X.shape[0]
        for _ in range(self.epochs):
            order = self._rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start : start + self.batch_size]
                _, grad = self.loss_and_grad(X[batch], Y[batch])
                self.set_params(self.get_params() - self.learning_rate * grad)
        return self

    # -- forecasting ------------------------------------------------------

    def can_forecast(self, key: SeriesKey) -> bool:
        return key in self._tails

    def forecast_steps(self, key: SeriesKey) -> ForecastSet:
        if key not in self._tails:
            raise ValueError(f"series {key} shorter than window {WINDOW}")
        values, month, regime = self._tails[key]
        mean, std = self._stats[key]
        row = [(v - mean) / std for v in values]
        row += _one_hot(month - 1, 12)
        row += [1.0 if regime == r else 0.0 for r in _REGIMES]
        z = self.forward(np.asarray([row]))[0]
        points = []
        for s in self.steps:
            value = max(0.0, float(z[s - 1] * std + mean))
            points.append(
                ForecastPoint(horizon=s, point=value, lower=value, upper=value)
            )
        return ForecastSet(key, self._origins[key], tuple(points), "mlp")
