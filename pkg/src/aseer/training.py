"""Optimization loop: masked hybrid objective, early stopping, checkpoints."""

from __future__ import annotations

import csv
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .data import (
    DataError,
    NormStats,
    dataset_duration,
    load_dataset,
    load_graph_files,
    make_windows,
    split_boundaries,
)
from .model import build_model
from .plan import InstancePlan, build_plan
from .types import DiffusionGraph, ForecastInstance, SensorSeries


class TrainingDiverged(Exception):
    """Raised when the objective stops being finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    patience: int = 10
    max_epochs: int = 100
    grad_clip: float = 5.0
    seed: int = 0
    history_len: int = 3600
    horizon: int = 3600
    stride: int = 1800
    epsilon_km: float = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_val: float = math.inf
    best_epoch: int = 0
    epochs_run: int = 0


def load_data_dir(data_dir: Path | str, epsilon_km: float) -> tuple[list[SensorSeries], DiffusionGraph]:
    data_dir = Path(data_dir)
    dataset = load_dataset(data_dir / "dataset.csv")
    graph = load_graph_files(data_dir, epsilon_km)
    return dataset, graph


def split_instances(
    dataset: list[SensorSeries], cfg: TrainConfig
) -> tuple[list[ForecastInstance], list[ForecastInstance], list[ForecastInstance], NormStats]:
    """Chronological 60/20/20 windows plus training-split statistics."""
    duration = dataset_duration(dataset)
    (tr0, tr1), (va0, va1), (te0, te1) = split_boundaries(duration)
    train = make_windows(dataset, cfg.history_len, cfg.horizon, cfg.stride, tr0, tr1)
    val = make_windows(dataset, cfg.history_len, cfg.horizon, cfg.stride, va0, va1)
    test = make_windows(dataset, cfg.history_len, cfg.horizon, cfg.stride, te0, te1)
    stats = NormStats.from_series(dataset, tr0, tr1)
    return train, val, test, stats


def build_plans(
    instances: list[ForecastInstance],
    graph: DiffusionGraph,
    require_targets: bool = True,
    dtype: torch.dtype | None = None,
) -> list[InstancePlan]:
    """Compile instances, dropping those that carry no usable signal."""
    plans = []
    for inst in instances:
        plan = build_plan(inst, graph, dtype=dtype)
        if plan.num_sensors == 0:
            continue
        if require_targets and float(plan.tgt_zeta.sum()) == 0.0:
            continue
        plans.append(plan)
    return plans


def validation_loss(model, plans: list[InstancePlan]) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for plan in plans:
            total += float(model.loss(plan).total)
    model.train()
    return total / max(len(plans), 1)


def train_model(
    model,
    train_plans: list[InstancePlan],
    val_plans: list[InstancePlan],
    cfg: TrainConfig,
    log=None,
) -> TrainResult:
    """Adam with gradient-norm clipping; one window's sensors per step;
    early stop when validation fails to improve for ``patience`` epochs.
    The model is left holding the best-validation parameters."""
    if not train_plans:
        raise DataError("no training windows with observed targets")
    torch.manual_seed(cfg.seed)
    order_rng = random.Random(cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult()
    best_state: dict | None = None
    stale = 0
    model.train()
    for epoch in range(1, cfg.max_epochs + 1):
        order = list(range(len(train_plans)))
        order_rng.shuffle(order)
        sums = [0.0, 0.0, 0.0]
        for w in order:
            plan = train_plans[w]
            optimizer.zero_grad()
            lb = model.loss(plan)
            total = lb.total
            if not torch.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, window anchored {plan.anchor_t}"
                )
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            lp, ld, lf, _ = lb.detach_floats()
            sums[0] += lp
            sums[1] += ld
            sums[2] += lf
        n = len(train_plans)
        val_total = validation_loss(model, val_plans) if val_plans else sums[0] / n
        if not math.isfinite(val_total):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        row = {
            "epoch": epoch,
            "loss_p": sums[0] / n,
            "loss_delta": sums[1] / n,
            "loss_f": sums[2] / n,
            "val_total": val_total,
        }
        result.history.append(row)
        result.epochs_run = epoch
        if log:
            log(
                f"epoch {epoch:3d}  L_p {row['loss_p']:.3f}  L_d {row['loss_delta']:.3f}  "
                f"L_f {row['loss_f']:.3f}  val {val_total:.3f}"
            )
        if val_total < result.best_val:
            result.best_val = val_total
            result.best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    return result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: Path | str, model, cfg: TrainConfig, result: TrainResult
) -> None:
    """Persist parameters plus everything needed to rebuild: model config,
    normalization statistics (also mirrored to a JSON sidecar), training
    config echo and history."""
    path = Path(path)
    torch.save(
        {
            "model_type": model.name,
            "model_config": model.config,
            "state_dict": model.state_dict(),
            "norm_stats": asdict(model.norm_stats()),
            "train_config": asdict(cfg),
            "history": result.history,
            "best_val": result.best_val,
            "best_epoch": result.best_epoch,
        },
        path,
    )
    model.norm_stats().save(path.with_suffix(".stats.json"))


def load_checkpoint(path: Path | str):
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, weights_only=False)
    cfg = payload["model_config"]
    model = build_model(
        payload["model_type"],
        cfg["sensor_ids"],
        **{k: v for k, v in cfg.items() if k != "sensor_ids"},
    )
    model.set_norm_stats(NormStats(**payload["norm_stats"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def write_history_csv(path: Path | str, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_p", "loss_delta", "loss_f", "val_total"])
        for row in history:
            writer.writerow(
                [row["epoch"], repr(row["loss_p"]), repr(row["loss_delta"]),
                 repr(row["loss_f"]), repr(row["val_total"])]
            )


def run_training(
    data_dir: Path | str,
    model_section: dict,
    cfg: TrainConfig,
    out_dir: Path | str,
    log=None,
):
    """End-to-end: load data, split, build model per config, train, persist."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset, graph = load_data_dir(data_dir, cfg.epsilon_km)
    train_inst, val_inst, _, stats = split_instances(dataset, cfg)
    train_plans = build_plans(train_inst, graph)
    val_plans = build_plans(val_inst, graph)
    if not train_plans:
        raise DataError("dataset produced no usable training windows")

    torch.manual_seed(cfg.seed)
    model_type = model_section.get("type", "aseer")
    kwargs = {k: v for k, v in model_section.items() if k != "type"}
    model = build_model(model_type, graph.sensor_ids, **kwargs)
    model.set_norm_stats(stats)

    result = train_model(model, train_plans, val_plans, cfg, log=log)
    ckpt_path = out_dir / "checkpoint.pt"
    save_checkpoint(ckpt_path, model, cfg, result)
    write_history_csv(out_dir / "history.csv", result.history)
    return model, result, ckpt_path
