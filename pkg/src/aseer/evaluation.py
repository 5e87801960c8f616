"""Evaluation drivers: forecasts over windows, metric reports, latency."""

from __future__ import annotations

import csv
import time
from pathlib import Path

import torch

from .baselines import ha_predict, last_predict, oracle_predict
from .data import DataError
from .metrics import EvalPair, evaluate_pairs, make_pair
from .model import ASeer, build_model
from .plan import InstancePlan, build_plan
from .types import DiffusionGraph, ForecastInstance, SlotForecast

HEURISTICS = ("last", "ha", "oracle")


def heuristic_forecasts(
    name: str, instance: ForecastInstance
) -> dict[str, SlotForecast]:
    out: dict[str, SlotForecast] = {}
    for sid, window in instance.sensors.items():
        if not window.available:
            continue
        min_slots = len(window.targets)
        if name == "last":
            fc = last_predict(window, instance.horizon, min_slots)
        elif name == "ha":
            fc = ha_predict(window, instance.horizon, min_slots)
        elif name == "oracle":
            fc = oracle_predict(window)
        else:
            raise DataError(f"unknown heuristic: {name!r}")
        if fc is not None:
            out[sid] = fc
    return out


def model_forecasts(model, plan: InstancePlan) -> dict[str, SlotForecast]:
    return {fc.sensor_id: fc for fc in model.predict(plan)}


def evaluate_on_instances(
    predictor,
    instances: list[ForecastInstance],
    graph: DiffusionGraph,
    collect_forecasts: bool = False,
):
    """Score a model object or heuristic name over forecast instances.

    Returns (metrics dict, pairs, forecasts-by-window). A window's sensor
    contributes once per window; metrics aggregate globally over all
    (window, sensor, slot) entries.
    """
    pairs: list[EvalPair] = []
    all_forecasts: list[tuple[ForecastInstance, dict[str, SlotForecast]]] = []
    for instance in instances:
        if isinstance(predictor, str):
            fcs = heuristic_forecasts(predictor, instance)
        else:
            plan = build_plan(instance, graph)
            fcs = model_forecasts(predictor, plan)
        for sid, fc in fcs.items():
            pair = make_pair(
                instance.sensors[sid], fc, instance.anchor_t, instance.horizon
            )
            if pair is not None:
                pairs.append(pair)
        if collect_forecasts:
            all_forecasts.append((instance, fcs))
    return evaluate_pairs(pairs), pairs, all_forecasts


def mean_forecast_latency_ms(model, plans: list[InstancePlan], repeats: int = 3) -> float:
    """Wall-clock per full-window forecast, end to end."""
    if not plans:
        raise DataError("latency measurement needs at least one window")
    t0 = time.perf_counter()
    with torch.no_grad():
        for _ in range(repeats):
            for plan in plans:
                model.predict(plan)
    return (time.perf_counter() - t0) / (repeats * len(plans)) * 1000.0


def _resized_decoder_model(model: ASeer, step_size: int) -> ASeer:
    """Same weights with a different decoding block size; the predictor's
    output layer is the only shape that can change and is re-initialized
    when it does (latency depends on structure, not fit)."""
    cfg = dict(model.config)
    sensor_ids = cfg.pop("sensor_ids")
    cfg["step_size"] = step_size
    torch.manual_seed(0)
    clone = ASeer(sensor_ids, **cfg)
    clone.set_norm_stats(model.norm_stats())
    src = model.state_dict()
    dst = clone.state_dict()
    compatible = {k: v for k, v in src.items() if k in dst and dst[k].shape == v.shape}
    dst.update(compatible)
    clone.load_state_dict(dst)
    clone.eval()
    return clone


def latency_sweep(
    model: ASeer,
    plans: list[InstancePlan],
    step_sizes: list[int],
    horizon_hours: list[float],
    repeats: int = 3,
    nominal_cycle_s: float = 60.0,
) -> list[dict]:
    """Mean decoding latency per forecast at fixed emitted lengths.

    Each horizon is standardized to ``ceil(hours * 3600 / nominal_cycle_s)``
    emitted slots so every block size predicts the same sequence length;
    the encoder runs once per window outside the timed region.
    """
    if not plans:
        raise DataError("latency sweep needs at least one window")
    rows: list[dict] = []
    for xi in step_sizes:
        clone = _resized_decoder_model(model, xi)
        encoded = []
        with torch.no_grad():
            for plan in plans:
                encoded.append((plan, clone.encode(plan)))
        for hours in horizon_hours:
            slots = max(1, int(-(-hours * 3600 // nominal_cycle_s)))
            invocations = -(-slots // xi)
            with torch.no_grad():
                t0 = time.perf_counter()
                for _ in range(repeats):
                    for plan, h in encoded:
                        needed = torch.full((plan.num_sensors,), slots, dtype=torch.long)
                        clone.decoder.rollout(
                            h, plan.sensor_global, clone.time_enc,
                            clone.pf_mean[0], clone.pf_std[0],
                            tau=0.0, needed=needed, clamp=True,
                        )
                elapsed = time.perf_counter() - t0
            rows.append(
                {
                    "xi": xi,
                    "hours": hours,
                    "ms": elapsed / (repeats * len(plans)) * 1000.0,
                    "slots": slots,
                    "invocations": int(invocations),
                }
            )
    return rows


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def write_metrics_csv(path: Path | str, model_name: str, metrics: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "metric", "value"])
        for name, value in metrics.items():
            writer.writerow([model_name, name, "" if value is None else repr(float(value))])


def read_metrics_csv(path: Path | str) -> list[tuple[str, str, float | None]]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            value = float(row["value"]) if row["value"] else None
            rows.append((row["model"], row["metric"], value))
    return rows


def write_latency_csv(path: Path | str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xi", "hours", "ms"])
        for row in rows:
            writer.writerow([row["xi"], row["hours"], repr(row["ms"])])


def write_forecast_csv(
    path: Path | str,
    window_forecasts: list[tuple[ForecastInstance, dict[str, SlotForecast]]],
) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_id", "slot_index", "begin", "length", "flow", "elapsed"])
        for _instance, fcs in window_forecasts:
            for sid in sorted(fcs):
                fc = fcs[sid]
                for k in range(len(fc)):
                    writer.writerow(
                        [sid, k, repr(float(fc.begin[k])), repr(float(fc.length[k])),
                         repr(float(fc.flow[k])), repr(float(fc.elapsed[k]))]
                    )


def summarize_metrics(metrics: dict) -> str:
    parts = []
    for name, value in metrics.items():
        shown = "absent" if value is None else f"{value:.4f}"
        parts.append(f"{name.replace('_', '-').upper()}: {shown}")
    return "\n".join(parts)
