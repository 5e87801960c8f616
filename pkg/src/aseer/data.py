"""Dataset loading, graph construction, window extraction, normalization."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .types import (
    DiffusionGraph,
    EdgeFeature,
    ForecastInstance,
    Measurement,
    SensorSeries,
    SensorWindow,
    TargetSlot,
)

EARTH_RADIUS_KM = 6371.0088

DATASET_FILE = "dataset.csv"
NODES_FILE = "nodes.csv"
REACH_FILE = "reach.csv"


class DataError(Exception):
    """Raised for malformed or missing input data."""


def spherical_distance_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two (lat, lon) points in km."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def build_graph(
    sensors: list[tuple[str, float, float]],
    lane_reachability: Iterable[tuple[str, str]],
    epsilon_km: float,
) -> DiffusionGraph:
    """Link sensors whose spherical distance falls below ``epsilon_km``.

    Every qualifying ordered pair (i, j), i != j, becomes a directed edge
    carrying (distance, reachability); no self-loops. Duplicate sensor ids
    are rejected.
    """
    if epsilon_km <= 0:
        raise DataError(f"epsilon_km must be > 0, got {epsilon_km}")
    seen: set[str] = set()
    for sid, _, _ in sensors:
        if sid in seen:
            raise DataError(f"duplicate sensor id: {sid!r}")
        seen.add(sid)
    reach = set(lane_reachability)
    ids = [sid for sid, _, _ in sensors]
    coords = {sid: (lat, lon) for sid, lat, lon in sensors}
    edges: dict[tuple[str, str], EdgeFeature] = {}
    for i, (sid_i, lat_i, lon_i) in enumerate(sensors):
        for j, (sid_j, lat_j, lon_j) in enumerate(sensors):
            if i == j:
                continue
            d = spherical_distance_km(lat_i, lon_i, lat_j, lon_j)
            if d < epsilon_km:
                edges[(sid_i, sid_j)] = EdgeFeature(d, int((sid_i, sid_j) in reach))
    return DiffusionGraph(ids, coords, edges, epsilon_km)


# ---------------------------------------------------------------------------
# CSV formats
# ---------------------------------------------------------------------------


def save_dataset(series_set: list[SensorSeries], path: Path | str) -> None:
    """Write ground-truth cycles as CSV rows (sensor_id, begin, length, flow,
    observed), sorted by (sensor_id, begin)."""
    rows = []
    for series in series_set:
        for m, obs in zip(series.measurements, series.observed):
            rows.append((m.sensor_id, m.begin, m.length, m.flow, int(obs)))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_id", "begin", "length", "flow", "observed"])
        for sid, begin, length, flow, obs in rows:
            writer.writerow([sid, begin, length, repr(float(flow)), obs])


def load_dataset(path: Path | str) -> list[SensorSeries]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    per_sensor: dict[str, tuple[list[Measurement], list[bool]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"sensor_id", "begin", "length", "flow", "observed"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise DataError(f"{path}: expected columns {sorted(expected)}")
        for row in reader:
            sid = row["sensor_id"]
            m = Measurement(sid, int(row["begin"]), int(row["length"]), float(row["flow"]))
            ms, obs = per_sensor.setdefault(sid, ([], []))
            ms.append(m)
            obs.append(bool(int(row["observed"])))
    out = []
    for sid in sorted(per_sensor):
        ms, obs = per_sensor[sid]
        order = sorted(range(len(ms)), key=lambda k: ms[k].begin)
        out.append(SensorSeries(sid, [ms[k] for k in order], [obs[k] for k in order]))
    return out


def save_graph_files(
    sensors: list[tuple[str, float, float]],
    reach_pairs: Iterable[tuple[str, str]],
    out_dir: Path | str,
) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / NODES_FILE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_id", "lat", "lon"])
        for sid, lat, lon in sensors:
            writer.writerow([sid, repr(float(lat)), repr(float(lon))])
    with open(out_dir / REACH_FILE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        for src, dst in sorted(reach_pairs):
            writer.writerow([src, dst])


def load_graph_files(data_dir: Path | str, epsilon_km: float) -> DiffusionGraph:
    data_dir = Path(data_dir)
    nodes_path = data_dir / NODES_FILE
    reach_path = data_dir / REACH_FILE
    if not nodes_path.exists():
        raise DataError(f"graph nodes file not found: {nodes_path}")
    sensors = []
    with open(nodes_path, newline="") as fh:
        for row in csv.DictReader(fh):
            sensors.append((row["sensor_id"], float(row["lat"]), float(row["lon"])))
    reach: list[tuple[str, str]] = []
    if reach_path.exists():
        with open(reach_path, newline="") as fh:
            for row in csv.DictReader(fh):
                reach.append((row["src"], row["dst"]))
    return build_graph(sensors, reach, epsilon_km)


# ---------------------------------------------------------------------------
# Window extraction
# ---------------------------------------------------------------------------


def make_windows(
    dataset: list[SensorSeries],
    history_len: int,
    horizon: int,
    stride: int,
    t_start: int = 0,
    t_end: Optional[int] = None,
) -> list[ForecastInstance]:
    """Slice a dataset into forecast instances.

    Anchors start at ``t_start + history_len - 1`` and advance by ``stride``;
    an anchor is kept only while its target window ends strictly before the
    last covered second, so every target slot's completion is known. Only
    measurements within [t_start, t_end) are visible, which keeps split
    boundaries leak-free.

    Per sensor, the history holds the observed measurements ending within
    the window, and the targets hold every ground-truth cycle beginning
    after the sensor's last observed measurement through ``anchor +
    horizon`` -- keeping masked slots at their ordinal positions so the
    slot index always counts consecutive true cycles.
    """
    if history_len <= 0 or horizon <= 0 or stride <= 0:
        raise DataError("history_len, horizon and stride must all be > 0")

    visible: dict[str, tuple[list[Measurement], list[bool]]] = {}
    max_end = None
    for series in dataset:
        ms, obs = [], []
        for m, o in zip(series.measurements, series.observed):
            if m.begin >= t_start and (t_end is None or m.end < t_end):
                ms.append(m)
                obs.append(o)
                max_end = m.end if max_end is None else max(max_end, m.end)
        visible[series.sensor_id] = (ms, obs)

    if max_end is None or max_end - t_start + 1 < history_len + horizon:
        warnings.warn(
            f"dataset span shorter than history_len + horizon "
            f"({history_len + horizon} s); no windows produced"
        )
        return []

    instances: list[ForecastInstance] = []
    anchor = t_start + history_len - 1
    while anchor + horizon < max_end:
        sensors: dict[str, SensorWindow] = {}
        for sid, (ms, obs) in visible.items():
            history = [
                m
                for m, o in zip(ms, obs)
                if o and anchor - history_len + 1 <= m.end <= anchor
            ]
            targets: list[TargetSlot] = []
            if history:
                last_end = history[-1].end
                for m, o in zip(ms, obs):
                    if last_end < m.begin <= anchor + horizon:
                        targets.append(
                            TargetSlot(
                                begin=m.begin,
                                length=m.length,
                                flow=m.flow,
                                mask=int(o),
                                elapsed=m.begin - last_end,
                            )
                        )
            sensors[sid] = SensorWindow(sid, history, targets)
        instances.append(ForecastInstance(anchor, history_len, horizon, sensors))
        anchor += stride
    return instances


def dataset_duration(dataset: list[SensorSeries]) -> int:
    """Total covered timespan: one past the latest end timestamp."""
    ends = [s.measurements[-1].end for s in dataset if s.measurements]
    return (max(ends) + 1) if ends else 0


def split_boundaries(duration: int, fractions=(0.6, 0.2, 0.2)) -> list[tuple[int, int]]:
    """Contiguous [start, end) time segments in the given proportions."""
    bounds = []
    start = 0
    acc = 0.0
    for frac in fractions:
        acc += frac
        end = int(round(duration * acc))
        bounds.append((start, end))
        start = end
    return bounds


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass
class NormStats:
    """Z-score statistics for cycle length and flow, from the training split."""

    p_mean: float
    p_std: float
    f_mean: float
    f_std: float

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(0.0, 1.0, 0.0, 1.0)

    @classmethod
    def from_series(cls, dataset: list[SensorSeries], t_start: int = 0,
                    t_end: Optional[int] = None) -> "NormStats":
        """Compute stats over observed measurements ending in [t_start, t_end)."""
        ps: list[float] = []
        fs: list[float] = []
        for series in dataset:
            for m, o in zip(series.measurements, series.observed):
                if o and m.end >= t_start and (t_end is None or m.end < t_end):
                    ps.append(float(m.length))
                    fs.append(float(m.flow))
        if not ps:
            raise DataError("no observed measurements to compute normalization stats")
        n = len(ps)
        p_mean = sum(ps) / n
        f_mean = sum(fs) / n
        p_var = sum((p - p_mean) ** 2 for p in ps) / n
        f_var = sum((f - f_mean) ** 2 for f in fs) / n
        return cls(p_mean, max(math.sqrt(p_var), 1e-6), f_mean, max(math.sqrt(f_var), 1e-6))

    def save(self, path: Path | str) -> None:
        with open(path, "w") as fh:
            json.dump(
                {"p_mean": self.p_mean, "p_std": self.p_std,
                 "f_mean": self.f_mean, "f_std": self.f_std},
                fh, indent=2,
            )
            fh.write("\n")

    @classmethod
    def load(cls, path: Path | str) -> "NormStats":
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["p_mean"], d["p_std"], d["f_mean"], d["f_std"])
