"""Synthetic adaptive-signal network simulator with controllable missingness.

A grid of intersections, each with several entrance lanes, runs a toy
adaptive controller: cycle lengths track an exponentially weighted moving
average of recent flow, flows follow a diurnal demand profile plus spillover
from the upstream lane. The result is an irregular, spatially coupled set of
cycle/flow series with complete ground truth, onto which contiguous missing
spans can be stamped.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError, save_dataset, save_graph_files
from .types import Measurement, SensorSeries

SECONDS_PER_DAY = 86400

# Morning and evening peaks over a quiet night baseline, veh/second.
DEFAULT_DIURNAL: list[list[float]] = [
    [0.0, 0.02],
    [6.0, 0.04],
    [8.0, 0.20],
    [12.0, 0.10],
    [18.0, 0.22],
    [21.0, 0.06],
    [24.0, 0.02],
]

# EWMA half-life of 3 cycles.
EWMA_ALPHA = 1.0 - 0.5 ** (1.0 / 3.0)


@dataclass
class ScenarioConfig:
    grid_rows: int = 2
    grid_cols: int = 5
    lanes_per_intersection: int = 2
    p_min: int = 40
    p_max: int = 200
    base_cycle: int = 60
    controller_gain: float = 2.0
    diurnal_profile: list[list[float]] = field(default_factory=lambda: [list(p) for p in DEFAULT_DIURNAL])
    coupling: float = 0.3
    missing_ratio: float = 0.3
    mean_missing_span: float = 1800.0
    sigma_length: float = 5.0
    sigma_flow: float = 0.1
    spacing_km: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.grid_rows < 1 or self.grid_cols < 1 or self.lanes_per_intersection < 1:
            raise DataError("grid dimensions and lanes per intersection must be >= 1")
        if not (1 <= self.p_min <= self.base_cycle <= self.p_max):
            raise DataError(
                f"need 1 <= p_min <= base_cycle <= p_max, got "
                f"({self.p_min}, {self.base_cycle}, {self.p_max})"
            )
        if not (0.0 <= self.missing_ratio < 1.0):
            raise DataError(f"missing_ratio must be in [0, 1), got {self.missing_ratio}")
        if not (0.0 <= self.coupling <= 1.0):
            raise DataError(f"coupling must be in [0, 1], got {self.coupling}")
        if self.sigma_length < 0 or self.sigma_flow < 0:
            raise DataError("noise sigmas must be >= 0")
        if self.mean_missing_span <= 0:
            raise DataError("mean_missing_span must be > 0")
        if not self.diurnal_profile or any(len(pt) != 2 for pt in self.diurnal_profile):
            raise DataError("diurnal_profile must be a list of [hour, rate] pairs")

    def to_dict(self) -> dict:
        return {
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "lanes_per_intersection": self.lanes_per_intersection,
            "p_min": self.p_min,
            "p_max": self.p_max,
            "base_cycle": self.base_cycle,
            "controller_gain": self.controller_gain,
            "diurnal_profile": [list(p) for p in self.diurnal_profile],
            "coupling": self.coupling,
            "missing_ratio": self.missing_ratio,
            "mean_missing_span": self.mean_missing_span,
            "sigma_length": self.sigma_length,
            "sigma_flow": self.sigma_flow,
            "spacing_km": self.spacing_km,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown scenario config keys: {sorted(unknown)}")
        return cls(**d)


def diurnal_rate(profile: list[list[float]], t_seconds: int) -> float:
    """Piecewise-linear demand rate (veh/s) at a timestamp, 24 h periodic."""
    hod = (t_seconds % SECONDS_PER_DAY) / 3600.0
    pts = sorted(profile, key=lambda p: p[0])
    if hod <= pts[0][0]:
        return float(pts[0][1])
    for (h0, r0), (h1, r1) in zip(pts, pts[1:]):
        if h0 <= hod <= h1:
            if h1 == h0:
                return float(r1)
            w = (hod - h0) / (h1 - h0)
            return float(r0 + w * (r1 - r0))
    return float(pts[-1][1])


@dataclass
class _Lane:
    index: int
    sensor_id: str
    lat: float
    lon: float
    upstream: int | None  # lane index feeding this one, if any


def _layout(config: ScenarioConfig) -> list[_Lane]:
    """Grid layout: lane k of an intersection faces direction k % 4 and is
    fed by the same-index lane of the adjacent intersection in that
    direction."""
    lat0, lon0 = 30.0, 120.0
    dlat = config.spacing_km / 111.32
    dlon = config.spacing_km / (111.32 * math.cos(math.radians(lat0)))
    offsets = {0: (-1, 0), 1: (0, 1), 2: (1, 0), 3: (0, -1)}  # N, E, S, W

    def lane_index(r: int, c: int, k: int) -> int:
        return (r * config.grid_cols + c) * config.lanes_per_intersection + k

    lanes: list[_Lane] = []
    for r in range(config.grid_rows):
        for c in range(config.grid_cols):
            for k in range(config.lanes_per_intersection):
                dr, dc = offsets[k % 4]
                ur, uc = r + dr, c + dc
                upstream = None
                if 0 <= ur < config.grid_rows and 0 <= uc < config.grid_cols:
                    upstream = lane_index(ur, uc, k)
                lanes.append(
                    _Lane(
                        index=lane_index(r, c, k),
                        sensor_id=f"s{r:02d}_{c:02d}_{k}",
                        lat=lat0 + r * dlat,
                        lon=lon0 + c * dlon,
                        upstream=upstream,
                    )
                )
    return lanes


def simulate(
    config: ScenarioConfig, days: int
) -> tuple[list[SensorSeries], list[tuple[str, float, float]], list[tuple[str, str]]]:
    """Run the network for ``days`` and return complete per-lane series plus
    the (nodes, reachability) inputs for graph construction.

    Per lane, cycles are consecutive (next begin = previous end + 1), cycle
    length = clip(base + gain * EWMA(flow) + noise, p_min, p_max), and flow =
    length * diurnal rate * lane factor + coupling * upstream's previous
    cycle flow, with multiplicative noise, floored at zero.
    """
    config.validate()
    if days < 1:
        raise DataError(f"days must be >= 1, got {days}")
    lanes = _layout(config)
    horizon_end = days * SECONDS_PER_DAY

    rngs = [np.random.default_rng([config.seed, lane.index]) for lane in lanes]
    lane_factor = [0.7 + 0.6 * float(rngs[lane.index].random()) for lane in lanes]
    ewma = [0.0] * len(lanes)
    last_flow = [0.0] * len(lanes)
    cycles: list[list[Measurement]] = [[] for _ in lanes]

    # Event queue keyed by (next cycle begin, lane index); per-lane RNG
    # streams keep the draws independent of interleaving.
    heap: list[tuple[int, int]] = []
    for lane in lanes:
        offset = int(rngs[lane.index].integers(0, config.base_cycle))
        heapq.heappush(heap, (offset, lane.index))

    while heap:
        begin, li = heapq.heappop(heap)
        rng = rngs[li]
        noise_len = config.sigma_length * float(rng.standard_normal()) if config.sigma_length > 0 else 0.0
        raw_len = config.base_cycle + config.controller_gain * ewma[li] + noise_len
        length = int(round(min(max(raw_len, config.p_min), config.p_max)))
        end = begin + length - 1
        if end >= horizon_end:
            continue  # lane finished; partial trailing cycle dropped

        rate = diurnal_rate(config.diurnal_profile, begin)
        spill = 0.0
        if config.coupling > 0 and lanes[li].upstream is not None:
            spill = config.coupling * last_flow[lanes[li].upstream]
        flow = length * rate * lane_factor[li] + spill
        if config.sigma_flow > 0:
            flow *= 1.0 + config.sigma_flow * float(rng.standard_normal())
        flow = max(0.0, flow)

        cycles[li].append(Measurement(lanes[li].sensor_id, begin, length, flow))
        last_flow[li] = flow
        ewma[li] = (1.0 - EWMA_ALPHA) * ewma[li] + EWMA_ALPHA * flow
        heapq.heappush(heap, (end + 1, li))

    series = [SensorSeries(lane.sensor_id, cycles[lane.index]) for lane in lanes]
    nodes = [(lane.sensor_id, lane.lat, lane.lon) for lane in lanes]
    reach = [
        (lanes[lane.upstream].sensor_id, lane.sensor_id)
        for lane in lanes
        if lane.upstream is not None
    ]
    return series, nodes, reach


def inject_missing(
    series: SensorSeries, missing_ratio: float, mean_span: float, seed: int
) -> SensorSeries:
    """Flag contiguous runs of cycles as unobserved.

    Missing spans arrive by a Poisson process with exponential lengths; a
    cycle overlapping any span is flagged. The realized unobserved-time
    fraction is required to land within +/-5 percentage points of the
    target; otherwise new draws are attempted (shrinking the span scale
    every 10 failures) up to 100 times, after which the closest attempt is
    kept with a warning. Ground-truth values are retained, only flags change.
    """
    if not (0.0 <= missing_ratio < 1.0):
        raise DataError(f"missing_ratio must be in [0, 1), got {missing_ratio}")
    if not series.measurements:
        return series
    n = len(series.measurements)
    if missing_ratio == 0.0:
        return SensorSeries(series.sensor_id, list(series.measurements), [True] * n)

    begins = np.array([m.begin for m in series.measurements], dtype=np.int64)
    ends = np.array([m.end for m in series.measurements], dtype=np.int64)
    lengths = (ends - begins + 1).astype(np.float64)
    t0, t1 = int(begins[0]), int(ends[-1])
    total_time = float(t1 - t0 + 1)
    mean_cycle = float(lengths.mean())

    rng = np.random.default_rng([seed, 987654321])
    best_flags: np.ndarray | None = None
    best_err = math.inf
    span_scale = float(mean_span)
    for attempt in range(100):
        if attempt > 0 and attempt % 10 == 0:
            span_scale *= 0.8
        # Whole-cycle flagging dilates each span by roughly one cycle, so
        # discount the effective span length when choosing the arrival rate.
        eff = span_scale + mean_cycle
        lam = -math.log(1.0 - missing_ratio) / eff
        n_spans = rng.poisson(lam * total_time)
        flags = np.ones(n, dtype=bool)
        if n_spans > 0:
            starts = t0 + rng.random(n_spans) * total_time
            spans = rng.exponential(span_scale, n_spans)
            for s, w in zip(starts, spans):
                hit = (begins <= s + w) & (ends >= s)
                flags[hit] = False
        realized = float(lengths[~flags].sum() / total_time)
        err = abs(realized - missing_ratio)
        if err < best_err:
            best_err = err
            best_flags = flags.copy()
        if err <= 0.05:
            break
    else:
        warnings.warn(
            f"inject_missing: target ratio {missing_ratio:.3f} not met within "
            f"100 attempts for sensor {series.sensor_id}; best error {best_err:.3f}"
        )
    assert best_flags is not None
    return SensorSeries(series.sensor_id, list(series.measurements), [bool(b) for b in best_flags])


def inject_missing_all(
    dataset: list[SensorSeries], missing_ratio: float, mean_span: float, seed: int
) -> list[SensorSeries]:
    return [
        inject_missing(s, missing_ratio, mean_span, seed + 1000 * i)
        for i, s in enumerate(dataset)
    ]


def export(
    dataset: list[SensorSeries],
    nodes: list[tuple[str, float, float]],
    reach: list[tuple[str, str]],
    out_dir: Path | str,
) -> None:
    """Write dataset.csv, nodes.csv and reach.csv so that a reload followed
    by a re-export is byte-identical."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_dataset(dataset, out_dir / "dataset.csv")
        save_graph_files(nodes, reach, out_dir)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out_dir}: {exc}") from exc


def generate_dataset(
    config: ScenarioConfig, days: int, out_dir: Path | str | None = None
) -> tuple[list[SensorSeries], list[tuple[str, float, float]], list[tuple[str, str]]]:
    """Simulate, stamp missing spans, optionally export."""
    series, nodes, reach = simulate(config, days)
    if config.missing_ratio > 0:
        series = inject_missing_all(
            series, config.missing_ratio, config.mean_missing_span, config.seed
        )
    if out_dir is not None:
        export(series, nodes, reach, out_dir)
    return series, nodes, reach
