"""Command-line entry points: generate, train, eval, latency, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .data import DataError
from .evaluation import (
    evaluate_on_instances,
    latency_sweep,
    mean_forecast_latency_ms,
    read_metrics_csv,
    summarize_metrics,
    write_forecast_csv,
    write_latency_csv,
    write_metrics_csv,
)
from .synthgen import ScenarioConfig, generate_dataset
from .training import (
    TrainConfig,
    TrainingDiverged,
    build_plans,
    load_checkpoint,
    load_data_dir,
    run_training,
    split_instances,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="aseer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_gen = sub.add_parser("generate", help="simulate a synthetic dataset")
    p_gen.add_argument("--config", type=Path, default=None)
    p_gen.add_argument("--out", type=Path, required=True)
    p_gen.add_argument("--days", type=int, default=None)
    p_gen.add_argument("--seed", type=int, default=None)

    p_train = sub.add_parser("train", help="train a forecaster")
    p_train.add_argument("--config", type=Path, default=None)
    p_train.add_argument("--data", type=Path, required=True)
    p_train.add_argument("--out", type=Path, required=True)
    p_train.add_argument("--model", choices=["aseer", "recurrent"], default=None)
    p_train.add_argument("--step-size", type=int, default=None, dest="step_size")
    p_train.add_argument("--no-agdn", action="store_true", dest="no_agdn")
    p_train.add_argument("--no-pte", action="store_true", dest="no_pte")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--max-epochs", type=int, default=None, dest="max_epochs")
    p_train.add_argument("--quiet", action="store_true")

    p_eval = sub.add_parser("eval", help="compute metrics on a split")
    p_eval.add_argument("--checkpoint", type=Path, default=None)
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--out", type=Path, required=True)
    p_eval.add_argument(
        "--model", choices=["checkpoint", "last", "ha"], default="checkpoint"
    )
    p_eval.add_argument("--split", choices=["train", "val", "test"], default="test")
    p_eval.add_argument("--config", type=Path, default=None,
                        help="window parameters when no checkpoint is given")

    p_lat = sub.add_parser("latency", help="decoding latency by block size")
    p_lat.add_argument("--checkpoint", type=Path, required=True)
    p_lat.add_argument("--data", type=Path, required=True)
    p_lat.add_argument("--out", type=Path, required=True)
    p_lat.add_argument("--step-sizes", default="1,6,12,24,48", dest="step_sizes")
    p_lat.add_argument("--horizon-hours", default="1,4,24", dest="horizon_hours")
    p_lat.add_argument("--repeats", type=int, default=3)
    p_lat.add_argument("--max-windows", type=int, default=5, dest="max_windows")

    p_rep = sub.add_parser("report", help="bar chart from metrics CSVs")
    p_rep.add_argument("--metrics", type=Path, nargs="+", required=True)
    p_rep.add_argument("--out", type=Path, required=True)

    return parser


def _cmd_generate(args) -> int:
    cfg = load_config(args.config)
    scenario = ScenarioConfig.from_dict(cfg["scenario"])
    if args.seed is not None:
        scenario.seed = args.seed
    days = args.days if args.days is not None else cfg["days"]
    series, nodes, reach = generate_dataset(scenario, days, args.out)
    n_meas = sum(len(s) for s in series)
    print(f"wrote {len(series)} sensors, {n_meas} cycles over {days} day(s) to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    model_section = dict(cfg["model"])
    if args.model:
        model_section["type"] = args.model
    if args.step_size is not None:
        model_section["step_size"] = args.step_size
    if args.no_agdn:
        model_section["no_agdn"] = True
    if args.no_pte:
        model_section["no_pte"] = True
    if model_section["type"] == "recurrent":
        model_section = {
            "type": "recurrent",
            "d_hidden": model_section["d_hidden"],
            "hidden": model_section["hidden"],
        }
    train_cfg = TrainConfig.from_dict(cfg["training"])
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.max_epochs is not None:
        train_cfg.max_epochs = args.max_epochs
    log = None if args.quiet else print
    _, result, ckpt = run_training(args.data, model_section, train_cfg, args.out, log=log)
    print(f"best validation loss {result.best_val:.4f} at epoch {result.best_epoch}; "
          f"checkpoint: {ckpt}")
    return EXIT_OK


def _split_instances_for(args, train_cfg: TrainConfig):
    dataset, graph = load_data_dir(args.data, train_cfg.epsilon_km)
    train_inst, val_inst, test_inst, _ = split_instances(dataset, train_cfg)
    chosen = {"train": train_inst, "val": val_inst, "test": test_inst}[args.split]
    return chosen, graph


def _cmd_eval(args) -> int:
    if args.model == "checkpoint":
        if args.checkpoint is None:
            raise DataError("eval with --model checkpoint requires --checkpoint")
        model, payload = load_checkpoint(args.checkpoint)
        train_cfg = TrainConfig.from_dict(payload["train_config"])
        predictor = model
        name = payload["model_type"]
    else:
        cfg = load_config(args.config)
        train_cfg = TrainConfig.from_dict(cfg["training"])
        predictor = args.model
        name = args.model
    instances, graph = _split_instances_for(args, train_cfg)
    if not instances:
        raise DataError(f"no {args.split} windows available in {args.data}")
    metrics, _, forecasts = evaluate_on_instances(
        predictor, instances, graph, collect_forecasts=True
    )
    if args.model == "checkpoint":
        plans = build_plans(instances, graph, require_targets=False)[:5]
        metrics["latency_ms"] = mean_forecast_latency_ms(predictor, plans, repeats=2)
    args.out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(args.out / "metrics.csv", name, metrics)
    write_forecast_csv(args.out / "forecasts.csv", forecasts)
    print(f"model {name} on {args.split} split ({len(instances)} windows):")
    print(summarize_metrics(metrics))
    return EXIT_OK


def _cmd_latency(args) -> int:
    model, payload = load_checkpoint(args.checkpoint)
    if model.name != "aseer":
        raise DataError("latency sweep requires a block-decoding checkpoint")
    train_cfg = TrainConfig.from_dict(payload["train_config"])
    dataset, graph = load_data_dir(args.data, train_cfg.epsilon_km)
    _, _, test_inst, _ = split_instances(dataset, train_cfg)
    plans = build_plans(test_inst, graph, require_targets=False)[: args.max_windows]
    if not plans:
        raise DataError("no usable windows for the latency sweep")
    step_sizes = [int(x) for x in str(args.step_sizes).split(",") if x]
    horizon_hours = [float(x) for x in str(args.horizon_hours).split(",") if x]
    rows = latency_sweep(model, plans, step_sizes, horizon_hours, repeats=args.repeats)
    write_latency_csv(args.out, rows)
    for row in rows:
        print(f"xi={row['xi']:>3}  horizon={row['hours']:>5}h  "
              f"{row['ms']:8.2f} ms  ({row['invocations']} invocations)")
    return EXIT_OK


def _cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_metric: dict[str, dict[str, float]] = {}
    for path in args.metrics:
        if not path.exists():
            raise DataError(f"metrics file not found: {path}")
        for model, metric, value in read_metrics_csv(path):
            if value is not None:
                by_metric.setdefault(metric, {})[model] = value
    if not by_metric:
        raise DataError("no metric values found in the given files")
    names = [m for m in by_metric if m != "latency_ms"]
    fig, axes = plt.subplots(2, 3, figsize=(12, 6))
    for ax, metric in zip(axes.flat, names):
        models = sorted(by_metric[metric])
        values = [by_metric[metric][m] for m in models]
        ax.bar(models, values, color="steelblue")
        ax.set_title(metric.replace("_", "-").upper())
        ax.tick_params(axis="x", rotation=30)
    for ax in axes.flat[len(names):]:
        ax.axis("off")
    fig.tight_layout()
    args.out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(f"wrote {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "latency": _cmd_latency,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
