"""Model registry: candidate specs, dispatch, and registry serialization.

Local models fit one series at a time; global models (gbt, mlp) train on
rows pooled across series and are rebuilt per backtest origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from ..core import DemandSeries, ExogenousFrame, ForecastSet
from . import statistical
from .gbt import GbtGlobal
from .mlp import MlpSeq

STREAMS = ("statistical", "ml", "dl")
_SMOOTHING_KEYS = ("alpha", "beta", "gamma")
GLOBAL_MODEL_IDS = ("gbt", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    stream: str
    hyperparameters: dict = field(default_factory=dict)
    # Custom fit-and-forecast callable (series, frames, steps) -> ForecastSet;
    # overrides the built-in dispatch when set.
    forecaster: Callable | None = None

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise ValueError(f"unknown stream {self.stream!r}")
        for key in _SMOOTHING_KEYS:
            if key in self.hyperparameters:
                value = self.hyperparameters[key]
                if not 0.0 < value <= 1.0:
                    raise ValueError(f"{key} must be in (0,1], got {value}")

    @property
    def is_global(self) -> bool:
        return self.model_id in GLOBAL_MODEL_IDS


def default_specs() -> list[ModelSpec]:
    return [
        ModelSpec("snaive", "statistical", {}),
        ModelSpec(
            "ets_seasonal_additive", "statistical", {"alpha": 0.3, "gamma": 0.1}
        ),
        ModelSpec("sba", "statistical", {"alpha": 0.1}),
        ModelSpec("arx", "statistical", {"lag_order": 1}),
        ModelSpec(
            "gbt",
            "ml",
            {"n_trees": 120, "max_depth": 3, "learning_rate": 0.15,
             "min_samples_leaf": 5},
        ),
        ModelSpec(
            "mlp",
            "dl",
            {"hidden": 32, "learning_rate": 0.01, "epochs": 200,
             "batch_size": 32, "seed": 42},
        ),
    ]


def validate_registry(specs: list[ModelSpec]) -> None:
    ids = [s.model_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("model_id must be unique within a registry")


def local_forecast(
    spec: ModelSpec,
    series: DemandSeries,
    frames: list[ExogenousFrame],
    steps: list[int],
) -> ForecastSet:
    """Fit-and-forecast dispatch for per-series models."""
    hp = spec.hyperparameters
    if spec.forecaster is not None:
        return spec.forecaster(series, frames, steps)
    if spec.model_id == "snaive":
        return statistical.seasonal_naive(series, steps)
    if spec.model_id.startswith("ets_"):
        return statistical.exp_smoothing(
            series,
            steps,
            variant=spec.model_id[len("ets_"):],
            alpha=hp.get("alpha", 0.3),
            beta=hp.get("beta", 0.1),
            gamma=hp.get("gamma", 0.1),
        )
    if spec.model_id in ("croston", "sba", "tsb"):
        return statistical.croston_family(
            series, steps, variant=spec.model_id, alpha=hp.get("alpha", 0.1)
        )
    if spec.model_id == "arx":
        return statistical.ar_exog(
            series, frames, steps, lag_order=int(hp.get("lag_order", 1))
        )
    raise ValueError(f"unknown local model {spec.model_id!r}")


def build_global(spec: ModelSpec, steps: list[int]):
    hp = dict(spec.hyperparameters)
    if spec.model_id == "gbt":
        return GbtGlobal(
            steps,
            n_trees=int(hp.get("n_trees", 200)),
            max_depth=int(hp.get("max_depth", 3)),
            learning_rate=hp.get("learning_rate", 0.1),
            min_samples_leaf=int(hp.get("min_samples_leaf", 5)),
            huber=bool(hp.get("huber", False)),
        )
    if spec.model_id == "mlp":
        return MlpSeq(
            steps,
            hidden=int(hp.get("hidden", 32)),
            learning_rate=hp.get("learning_rate", 0.01),
            epochs=int(hp.get("epochs", 200)),
            batch_size=int(hp.get("batch_size", 32)),
            seed=int(hp.get("seed", 42)),
        )
    raise ValueError(f"unknown global model {spec.model_id!r}")


def registry_document(
    specs: list[ModelSpec], trained_through: str, train_hash: str
) -> dict:
    """JSON-ready registry snapshot persisted alongside forecast artifacts."""
    return {
        "models": [
            {
                "model_id": s.model_id,
                "stream": s.stream,
                "hyperparameters": dict(sorted(s.hyperparameters.items())),
            }
            for s in specs
        ],
        "trained_through": trained_through,
        "training_slice_hash": train_hash,
    }
