"""Irregular traffic-signal time series forecasting toolkit.

Forecasts variable-length sequences of (signal cycle length, per-cycle flow)
pairs from incomplete, time-misaligned sensor histories. Ships a synthetic
adaptive-signal data generator, an asynchronous spatio-temporal graph model
with block-wise decoding, masked training losses, six evaluation metrics,
and heuristic baselines, all behind one CLI.
"""

from .data import DataError, NormStats, build_graph, load_dataset, make_windows, save_dataset
from .losses import LossBreakdown, hybrid_loss, loss_cycle, loss_flow, loss_timing
from .metrics import evaluate_pairs, f_aae, f_aae_bruteforce, make_pair
from .model import ASeer, build_model
from .plan import InstancePlan, build_plan
from .synthgen import ScenarioConfig, generate_dataset, inject_missing, simulate
from .training import TrainConfig, TrainingDiverged, load_checkpoint, train_model
from .types import (
    DiffusionGraph,
    ForecastInstance,
    Measurement,
    SensorSeries,
    SlotForecast,
    TargetSlot,
    validate_series,
)

__version__ = "0.1.0"

__all__ = [
    "ASeer",
    "DataError",
    "DiffusionGraph",
    "ForecastInstance",
    "InstancePlan",
    "LossBreakdown",
    "Measurement",
    "NormStats",
    "ScenarioConfig",
    "SensorSeries",
    "SlotForecast",
    "TargetSlot",
    "TrainConfig",
    "TrainingDiverged",
    "build_graph",
    "build_model",
    "build_plan",
    "evaluate_pairs",
    "f_aae",
    "f_aae_bruteforce",
    "generate_dataset",
    "hybrid_loss",
    "inject_missing",
    "load_checkpoint",
    "load_dataset",
    "loss_cycle",
    "loss_flow",
    "loss_timing",
    "make_pair",
    "make_windows",
    "save_dataset",
    "simulate",
    "train_model",
    "validate_series",
]
