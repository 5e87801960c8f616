"""Evaluation metrics over ordinally aligned predicted/true slot sequences.

Cycle metrics score begin-timestamp and length errors together; flow metrics
score per-cycle flows under the assumption of known cycle lengths; the
density metric compares per-second flow densities on a wall-clock grid
without that assumption. Observation masks exclude withheld slots (and the
seconds they cover) everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import SensorWindow, SlotForecast

METRIC_NAMES = ["c_mae", "c_rmse", "c_mape", "f_mae", "f_rmse", "f_aae"]


@dataclass
class EvalPair:
    """One sensor-window's aligned forecast and ground truth.

    Slot arrays are ordinally aligned (k-th prediction vs k-th true cycle
    after the last observation). ``pred_*_all`` keep every emitted slot for
    the density grid; the plain ``pred_*`` views are cut to the evaluation
    slot count.
    """

    sensor_id: str
    t_last: int
    grid_end: int  # anchor + horizon, last second of the density grid
    pred_begin: np.ndarray
    pred_p: np.ndarray
    pred_u: np.ndarray
    pred_f: np.ndarray
    gt_begin: np.ndarray
    gt_p: np.ndarray
    gt_f: np.ndarray
    gt_delta: np.ndarray
    zeta: np.ndarray
    pred_begin_all: np.ndarray
    pred_p_all: np.ndarray
    pred_f_all: np.ndarray


def make_pair(
    window: SensorWindow, forecast: SlotForecast, anchor_t: int, horizon: int
) -> EvalPair | None:
    """Align a forecast with a window's targets; None when nothing to score."""
    if not window.available or not window.targets:
        return None
    k = len(window.targets)
    if len(forecast) < k:
        raise ValueError(
            f"forecast for {window.sensor_id} has {len(forecast)} slots, "
            f"needs {k}"
        )
    gt_begin = np.array([t.begin for t in window.targets], dtype=np.float64)
    gt_p = np.array([t.length for t in window.targets], dtype=np.float64)
    gt_f = np.array([t.flow for t in window.targets], dtype=np.float64)
    gt_delta = np.array([t.elapsed for t in window.targets], dtype=np.float64)
    zeta = np.array([t.mask for t in window.targets], dtype=np.float64)
    return EvalPair(
        sensor_id=window.sensor_id,
        t_last=int(window.last_end),
        grid_end=anchor_t + horizon,
        pred_begin=np.asarray(forecast.begin[:k], dtype=np.float64),
        pred_p=np.asarray(forecast.length[:k], dtype=np.float64),
        pred_u=np.asarray(forecast.unit_flow[:k], dtype=np.float64),
        pred_f=np.asarray(forecast.flow[:k], dtype=np.float64),
        gt_begin=gt_begin,
        gt_p=gt_p,
        gt_f=gt_f,
        gt_delta=gt_delta,
        zeta=zeta,
        pred_begin_all=np.asarray(forecast.begin, dtype=np.float64),
        pred_p_all=np.asarray(forecast.length, dtype=np.float64),
        pred_f_all=np.asarray(forecast.flow, dtype=np.float64),
    )


def c_metrics(pairs: list[EvalPair]) -> tuple[float | None, float | None, float | None]:
    """(C-MAE, C-RMSE, C-MAPE) over begins and lengths of observed slots."""
    n1 = 0.0
    abs_sum = sq_sum = pct_sum = 0.0
    for pr in pairs:
        z = pr.zeta
        n1 += z.sum()
        db = np.abs(pr.pred_begin - pr.gt_begin)
        dp = np.abs(pr.pred_p - pr.gt_p)
        abs_sum += ((db + dp) * z).sum()
        sq_sum += ((db**2 + dp**2) * z).sum()
        pct_sum += ((db / pr.gt_delta + dp / pr.gt_p) * z).sum()
    if n1 == 0:
        return None, None, None
    return (
        abs_sum / (2 * n1),
        math.sqrt(sq_sum / (2 * n1)),
        100.0 * pct_sum / (2 * n1),
    )


def f_metrics(pairs: list[EvalPair]) -> tuple[float | None, float | None]:
    """(F-MAE, F-RMSE): flows recomputed with true cycle lengths."""
    n1 = 0.0
    abs_sum = sq_sum = 0.0
    for pr in pairs:
        z = pr.zeta
        n1 += z.sum()
        df = np.abs(pr.pred_u * pr.gt_p - pr.gt_f)
        abs_sum += (df * z).sum()
        sq_sum += (df**2 * z).sum()
    if n1 == 0:
        return None, None
    return abs_sum / n1, math.sqrt(sq_sum / n1)


def _pair_density_error(pair: EvalPair) -> tuple[float, int]:
    """Sum of |predicted - true| per-second density over observed seconds,
    plus the observed-second count, for one pair."""
    t0 = pair.t_last + 1
    t1 = pair.grid_end
    if t1 < t0:
        return 0.0, 0
    n = t1 - t0 + 1
    rho = np.zeros(n)
    eta = np.zeros(n, dtype=bool)
    for k in range(len(pair.gt_p)):
        if pair.zeta[k] == 0:
            continue
        a = max(int(pair.gt_begin[k]), t0)
        b = min(int(pair.gt_begin[k] + pair.gt_p[k] - 1), t1)
        if a <= b:
            rho[a - t0 : b - t0 + 1] = pair.gt_f[k] / pair.gt_p[k]
            eta[a - t0 : b - t0 + 1] = True
    rho_hat = np.zeros(n)
    for k in range(len(pair.pred_p_all)):
        # Real-valued spans cover the integer seconds inside them; spans past
        # the horizon are cut at the grid end. Later slots win overlaps.
        a = max(math.ceil(pair.pred_begin_all[k]), t0)
        b = min(math.floor(pair.pred_begin_all[k] + pair.pred_p_all[k] - 1), t1)
        if a <= b and pair.pred_p_all[k] > 0:
            rho_hat[a - t0 : b - t0 + 1] = pair.pred_f_all[k] / pair.pred_p_all[k]
    return float(np.abs(rho_hat - rho)[eta].sum()), int(eta.sum())


def f_aae(pairs: list[EvalPair]) -> float | None:
    """Accumulated absolute density error, normalized per minute of
    observed ground truth."""
    num = 0.0
    seconds = 0
    for pair in pairs:
        err, cnt = _pair_density_error(pair)
        num += err
        seconds += cnt
    if seconds == 0:
        return None
    return num / (seconds / 60.0)


def f_aae_bruteforce(pairs: list[EvalPair]) -> float | None:
    """Independent per-second reference: loop every second, scan every slot."""
    num = 0.0
    seconds = 0
    for pair in pairs:
        for t in range(pair.t_last + 1, pair.grid_end + 1):
            eta = False
            rho = 0.0
            for k in range(len(pair.gt_p)):
                if pair.zeta[k] == 1 and pair.gt_begin[k] <= t <= pair.gt_begin[k] + pair.gt_p[k] - 1:
                    rho = pair.gt_f[k] / pair.gt_p[k]
                    eta = True
            if not eta:
                continue
            rho_hat = 0.0
            for k in range(len(pair.pred_p_all)):
                if (
                    pair.pred_p_all[k] > 0
                    and pair.pred_begin_all[k] <= t <= pair.pred_begin_all[k] + pair.pred_p_all[k] - 1
                ):
                    rho_hat = pair.pred_f_all[k] / pair.pred_p_all[k]
            num += abs(rho_hat - rho)
            seconds += 1
    if seconds == 0:
        return None
    return num / (seconds / 60.0)


def evaluate_pairs(pairs: list[EvalPair]) -> dict[str, float | None]:
    """All six metrics; absent metrics (no observed slots) map to None."""
    cm, cr, cp = c_metrics(pairs)
    fm, fr = f_metrics(pairs)
    return {
        "c_mae": cm,
        "c_rmse": cr,
        "c_mape": cp,
        "f_mae": fm,
        "f_rmse": fr,
        "f_aae": f_aae(pairs),
    }
