"""Core domain types for irregular traffic-signal time series."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


@dataclass(frozen=True)
class Measurement:
    """One completed traffic-signal cycle observed by one lane sensor.

    ``begin`` and ``length`` are integer seconds; ``flow`` is the vehicle
    count accumulated during the cycle. The end timestamp is derived:
    ``end = begin + length - 1`` (a cycle of length 1 occupies exactly the
    second it begins on).
    """

    sensor_id: str
    begin: int
    length: int
    flow: float

    @property
    def end(self) -> int:
        return self.begin + self.length - 1


@dataclass
class SensorSeries:
    """Chronological cycle measurements of a single sensor."""

    sensor_id: str
    measurements: list[Measurement] = field(default_factory=list)
    # Parallel observed flags; True means the sensor actually reported the
    # cycle, False means the ground truth is retained but was withheld.
    observed: Optional[list[bool]] = None

    def __post_init__(self) -> None:
        if self.observed is None:
            self.observed = [True] * len(self.measurements)
        if len(self.observed) != len(self.measurements):
            raise ValueError(
                f"sensor {self.sensor_id}: observed flags ({len(self.observed)}) "
                f"do not match measurements ({len(self.measurements)})"
            )

    def __len__(self) -> int:
        return len(self.measurements)


def validate_series(series: SensorSeries) -> list[str]:
    """Check a series against the cycle invariants, reporting violations.

    Returns a list of human-readable violation descriptions, one per broken
    rule, each naming the offending measurement index. An empty list means
    the series is valid. Never raises.
    """
    violations: list[str] = []
    prev_end: Optional[int] = None
    prev_begin: Optional[int] = None
    for idx, m in enumerate(series.measurements):
        if m.length < 1:
            violations.append(f"length < 1 at index {idx}")
        if m.flow < 0:
            violations.append(f"flow < 0 at index {idx}")
        if prev_begin is not None and m.begin <= prev_begin:
            violations.append(
                f"begin not increasing at index {idx}: begin {m.begin} <= prev begin {prev_begin}"
            )
        elif prev_end is not None and m.begin <= prev_end:
            violations.append(
                f"overlap at index {idx}: begin {m.begin} <= prev end {prev_end}"
            )
        prev_end = m.end
        prev_begin = m.begin
    return violations


@dataclass(frozen=True)
class EdgeFeature:
    """Features attached to a directed sensor-to-sensor edge."""

    distance_km: float
    reachable: int  # 1 if directly reachable in the lane network, else 0

    def __post_init__(self) -> None:
        if self.distance_km < 0:
            raise ValueError(f"distance_km must be >= 0, got {self.distance_km}")
        if self.reachable not in (0, 1):
            raise ValueError(f"reachable must be 0 or 1, got {self.reachable}")


@dataclass
class DiffusionGraph:
    """Sensors as nodes, distance-threshold directed edges with features.

    ``edges[(i, j)]`` holds the features of the directed edge i -> j. An edge
    exists exactly when the spherical distance between the two sensors is
    below ``threshold_km`` and i != j; the distance relation is symmetric but
    the reachability flag may differ per direction.
    """

    sensor_ids: list[str]
    coords: dict[str, tuple[float, float]]  # sensor_id -> (lat, lon)
    edges: dict[tuple[str, str], EdgeFeature]
    threshold_km: float

    def __post_init__(self) -> None:
        self._index = {sid: k for k, sid in enumerate(self.sensor_ids)}
        self._out: dict[str, list[str]] = {sid: [] for sid in self.sensor_ids}
        for (src, dst) in self.edges:
            self._out[src].append(dst)
        for sid in self.sensor_ids:
            self._out[sid].sort(key=self._index.__getitem__)

    @property
    def num_sensors(self) -> int:
        return len(self.sensor_ids)

    def index_of(self, sensor_id: str) -> int:
        return self._index[sensor_id]

    def neighbors_out(self, sensor_id: str) -> list[str]:
        """Sensors that receive diffused measurements from ``sensor_id``."""
        return self._out[sensor_id]


@dataclass
class TargetSlot:
    """One ground-truth cycle position a forecast is aligned against.

    ``elapsed`` is the slot's begin time minus the end of the sensor's last
    observed measurement before the anchor; ``mask`` is 1 only when the slot
    was actually observed (unmasked slots keep their ground-truth values for
    bookkeeping but never enter losses or metrics).
    """

    begin: int
    length: int
    flow: float
    mask: int
    elapsed: int


@dataclass
class SensorWindow:
    """Per-sensor contents of one forecast instance."""

    sensor_id: str
    history: list[Measurement]  # observed measurements ending in the window
    targets: list[TargetSlot]

    @property
    def available(self) -> bool:
        """Sensors without any observed history cannot anchor a forecast."""
        return len(self.history) > 0

    @property
    def last_end(self) -> Optional[int]:
        return self.history[-1].end if self.history else None


@dataclass
class ForecastInstance:
    """One (sensor set, historical window, target window) sample."""

    anchor_t: int
    history_len: int
    horizon: int
    sensors: dict[str, SensorWindow]

    def available_sensors(self) -> list[str]:
        return [sid for sid, w in self.sensors.items() if w.available]


@dataclass
class SlotForecast:
    """Predicted slots for one sensor in one window.

    Parallel arrays (numpy, float64), ordinally aligned with the window's
    target slots: ``begin = t_last + elapsed``, ``flow = unit_flow *
    length``. ``t_last`` is the end of the sensor's last observed
    measurement the forecast chains from.
    """

    sensor_id: str
    t_last: int
    begin: "object"      # np.ndarray
    length: "object"     # np.ndarray
    flow: "object"       # np.ndarray
    unit_flow: "object"  # np.ndarray
    elapsed: "object"    # np.ndarray

    def __len__(self) -> int:
        return len(self.length)
