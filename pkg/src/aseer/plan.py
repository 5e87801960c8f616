"""Compile forecast instances into tensor tables for batched evaluation.

The asynchronous diffusion schedule is replayed once per instance: every
observed measurement, in global end-timestamp order, is stored at its graph
neighbors and each sensor's own measurements consume the accumulated buffer.
That replay depends only on timestamps and the graph, never on parameters,
so its result -- which message lands in which convolution -- is frozen into
flat index tables. The numeric attention work can then run batched over all
convolution events without changing the event-ordered semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .data import DataError
from .types import DiffusionGraph, ForecastInstance


@dataclass
class InstancePlan:
    """One forecast instance compiled against a diffusion graph.

    Regular convolution events are indexed in replay order, followed by one
    tail event per active sensor (the valueless query over residual
    messages). ``seq_*`` rows list each active sensor's history positions
    sensor-major for the temporal convolution; ``seq_event`` points each
    position at its convolution event.
    """

    anchor_t: int
    horizon: int
    sensor_ids: list[str]        # active sensors, ascending id
    sensor_global: Tensor        # (S,) long, index into graph/time-encoding
    t_last: Tensor               # (S,) last observed end timestamp
    hist_len: Tensor             # (S,) long, T^i

    # Convolution events (regular then tail).
    ev_sensor_global: Tensor     # (E,) long
    ev_query_pf: Tensor          # (E, 2) raw cycle length / flow; zeros at tails
    ev_is_tail: Tensor           # (E,) bool
    tail_event: Tensor           # (S,) long, tail event id per sensor

    # Messages, each consumed by exactly one event.
    msg_event: Tensor            # (M,) long
    msg_pf: Tensor               # (M, 2) raw source measurement
    msg_dt: Tensor               # (M,) nonnegative interval fed to the encoding
    msg_edge: Tensor             # (M, 2) distance km, reachability flag

    # Sequence rows, sensor-major.
    seq_seg: Tensor              # (P,) long, local sensor index
    seq_sensor_global: Tensor    # (P,) long
    seq_pf: Tensor               # (P, 2) raw
    seq_dt: Tensor               # (P,) t_last - t_n
    seq_event: Tensor            # (P,) long

    # Targets padded to the widest sensor.
    tgt_p: Tensor                # (S, L) raw lengths
    tgt_f: Tensor                # (S, L) raw flows
    tgt_delta: Tensor            # (S, L) ground-truth elapsed
    tgt_zeta: Tensor             # (S, L) observation mask, 0 on padding
    tgt_begin: Tensor            # (S, L)
    tgt_len: Tensor              # (S,) long, true slot count per sensor

    @property
    def num_sensors(self) -> int:
        return len(self.sensor_ids)

    @property
    def num_events(self) -> int:
        return int(self.ev_sensor_global.shape[0])

    @property
    def num_messages(self) -> int:
        return int(self.msg_event.shape[0])

    @property
    def max_targets(self) -> int:
        return int(self.tgt_p.shape[1])


def build_plan(
    instance: ForecastInstance, graph: DiffusionGraph, dtype: torch.dtype | None = None
) -> InstancePlan:
    dtype = dtype or torch.get_default_dtype()
    for sid in instance.sensors:
        if sid not in graph.coords:
            raise DataError(f"instance sensor {sid!r} missing from graph")

    active = sorted(sid for sid, w in instance.sensors.items() if w.available)
    local = {sid: s for s, sid in enumerate(active)}

    # Global replay order: end timestamp, then ascending sensor id. At a
    # shared timestamp every store happens before any convolution.
    events: list[tuple[int, str, int]] = []
    for sid in active:
        for n, m in enumerate(instance.sensors[sid].history):
            events.append((m.end, sid, n))
    events.sort(key=lambda e: (e[0], e[1]))

    buffers: dict[str, list[tuple[int, str, float, float, float, float]]] = {
        sid: [] for sid in active
    }

    ev_sensor_global: list[int] = []
    ev_query: list[tuple[float, float]] = []
    ev_is_tail: list[bool] = []
    msg_event: list[int] = []
    msg_pf: list[tuple[float, float]] = []
    msg_dt: list[float] = []
    msg_edge: list[tuple[float, float]] = []
    seq_event_of: dict[tuple[str, int], int] = {}

    def consume(sid: str, query_pf: tuple[float, float], q_time: int, tail: bool) -> int:
        event_id = len(ev_sensor_global)
        ev_sensor_global.append(graph.index_of(sid))
        ev_query.append(query_pf)
        ev_is_tail.append(tail)
        for emit_t, _src, p, f, dist, reach in buffers[sid]:
            msg_event.append(event_id)
            msg_pf.append((p, f))
            msg_dt.append(float(emit_t - q_time) if tail else float(q_time - emit_t))
            msg_edge.append((dist, reach))
        buffers[sid].clear()
        return event_id

    i = 0
    while i < len(events):
        t = events[i][0]
        j = i
        while j < len(events) and events[j][0] == t:
            j += 1
        group = events[i:j]
        # Store phase: diffuse each measurement to its out-neighbors.
        # Receivers without any observed history never convolve, so their
        # buffers are not materialized.
        for _t, sid, n in group:
            m = instance.sensors[sid].history[n]
            for nb in graph.neighbors_out(sid):
                if nb in buffers:
                    edge = graph.edges[(sid, nb)]
                    buffers[nb].append(
                        (t, sid, float(m.length), float(m.flow),
                         edge.distance_km, float(edge.reachable))
                    )
        # Convolve phase: each measured sensor drains its buffer.
        for _t, sid, n in group:
            m = instance.sensors[sid].history[n]
            seq_event_of[(sid, n)] = consume(
                sid, (float(m.length), float(m.flow)), t, tail=False
            )
        i = j

    tail_event: list[int] = []
    for sid in active:
        t_last = instance.sensors[sid].history[-1].end
        tail_event.append(consume(sid, (0.0, 0.0), t_last, tail=True))

    # Sensor-major sequence rows for the temporal convolution.
    seq_seg: list[int] = []
    seq_sensor_global: list[int] = []
    seq_pf: list[tuple[float, float]] = []
    seq_dt: list[float] = []
    seq_event: list[int] = []
    t_last_arr: list[int] = []
    hist_len: list[int] = []
    for sid in active:
        window = instance.sensors[sid]
        t_last = window.history[-1].end
        t_last_arr.append(t_last)
        hist_len.append(len(window.history))
        for n, m in enumerate(window.history):
            seq_seg.append(local[sid])
            seq_sensor_global.append(graph.index_of(sid))
            seq_pf.append((float(m.length), float(m.flow)))
            seq_dt.append(float(t_last - m.end))
            seq_event.append(seq_event_of[(sid, n)])

    s_count = len(active)
    l_max = max((len(instance.sensors[sid].targets) for sid in active), default=0)
    tgt_p = torch.zeros(s_count, l_max, dtype=dtype)
    tgt_f = torch.zeros(s_count, l_max, dtype=dtype)
    tgt_delta = torch.zeros(s_count, l_max, dtype=dtype)
    tgt_zeta = torch.zeros(s_count, l_max, dtype=dtype)
    tgt_begin = torch.zeros(s_count, l_max, dtype=dtype)
    tgt_len = torch.zeros(s_count, dtype=torch.long)
    for s, sid in enumerate(active):
        targets = instance.sensors[sid].targets
        tgt_len[s] = len(targets)
        for k, slot in enumerate(targets):
            tgt_p[s, k] = float(slot.length)
            tgt_f[s, k] = float(slot.flow)
            tgt_delta[s, k] = float(slot.elapsed)
            tgt_zeta[s, k] = float(slot.mask)
            tgt_begin[s, k] = float(slot.begin)

    def fvec(xs, width=None):
        if width is None:
            return torch.tensor(xs, dtype=dtype) if xs else torch.zeros(0, dtype=dtype)
        return (
            torch.tensor(xs, dtype=dtype)
            if xs
            else torch.zeros(0, width, dtype=dtype)
        )

    def ivec(xs):
        return torch.tensor(xs, dtype=torch.long) if xs else torch.zeros(0, dtype=torch.long)

    return InstancePlan(
        anchor_t=instance.anchor_t,
        horizon=instance.horizon,
        sensor_ids=active,
        sensor_global=ivec([graph.index_of(sid) for sid in active]),
        t_last=fvec([float(t) for t in t_last_arr]),
        hist_len=ivec(hist_len),
        ev_sensor_global=ivec(ev_sensor_global),
        ev_query_pf=fvec(ev_query, 2),
        ev_is_tail=torch.tensor(ev_is_tail, dtype=torch.bool)
        if ev_is_tail
        else torch.zeros(0, dtype=torch.bool),
        tail_event=ivec(tail_event),
        msg_event=ivec(msg_event),
        msg_pf=fvec(msg_pf, 2),
        msg_dt=fvec(msg_dt),
        msg_edge=fvec(msg_edge, 2),
        seq_seg=ivec(seq_seg),
        seq_sensor_global=ivec(seq_sensor_global),
        seq_pf=fvec(seq_pf, 2),
        seq_dt=fvec(seq_dt),
        seq_event=ivec(seq_event),
        tgt_p=tgt_p,
        tgt_f=tgt_f,
        tgt_delta=tgt_delta,
        tgt_zeta=tgt_zeta,
        tgt_begin=tgt_begin,
        tgt_len=tgt_len,
    )
