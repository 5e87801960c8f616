"""Reference predictors: repeat-last, historical average, plain recurrent."""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor, nn

from .data import NormStats
from .losses import LossBreakdown, hybrid_loss
from .plan import InstancePlan
from .types import SensorWindow, SlotForecast


def _chain_constant(
    window: SensorWindow, length: int, flow: float, horizon: float, min_slots: int
) -> SlotForecast:
    """Repeat one (length, flow) pair consecutively from the last observed
    end until the horizon is covered and at least ``min_slots`` exist."""
    t_last = window.last_end
    assert t_last is not None
    begins: list[float] = []
    elapsed = 1.0
    while elapsed <= horizon or len(begins) < max(min_slots, 1):
        begins.append(t_last + elapsed)
        elapsed += length
    k = len(begins)
    lengths = np.full(k, float(length))
    flows = np.full(k, float(flow))
    return SlotForecast(
        sensor_id=window.sensor_id,
        t_last=int(t_last),
        begin=np.asarray(begins, dtype=np.float64),
        length=lengths,
        flow=flows,
        unit_flow=flows / lengths,
        elapsed=np.asarray(begins, dtype=np.float64) - t_last,
    )


def last_predict(window: SensorWindow, horizon: float, min_slots: int = 0) -> SlotForecast | None:
    """Repeat the most recent observed measurement."""
    if not window.available:
        return None
    last = window.history[-1]
    return _chain_constant(window, last.length, last.flow, horizon, min_slots)


def ha_predict(window: SensorWindow, horizon: float, min_slots: int = 0) -> SlotForecast | None:
    """Repeat the historical window's mean measurement (mean length rounded
    to a whole second, floored at 1)."""
    if not window.available:
        return None
    p_bar = max(1, int(round(sum(m.length for m in window.history) / len(window.history))))
    f_bar = sum(m.flow for m in window.history) / len(window.history)
    return _chain_constant(window, p_bar, f_bar, horizon, min_slots)


def oracle_predict(window: SensorWindow) -> SlotForecast | None:
    """Replay the ground-truth targets as predictions (test fixture)."""
    if not window.available or not window.targets:
        return None
    t_last = window.last_end
    length = np.array([t.length for t in window.targets], dtype=np.float64)
    flow = np.array([t.flow for t in window.targets], dtype=np.float64)
    elapsed = np.array([t.elapsed for t in window.targets], dtype=np.float64)
    return SlotForecast(
        sensor_id=window.sensor_id,
        t_last=int(t_last),
        begin=t_last + elapsed,
        length=length,
        flow=flow,
        unit_flow=flow / length,
        elapsed=elapsed,
    )


class RecurrentForecaster(nn.Module):
    """Gated recurrent encoder over (length, flow, gap) triples with an
    autoregressive per-cycle decoder sharing the masked losses.

    Exists to show the training and evaluation pipeline is model-agnostic;
    the block size knob does not apply (one cycle per step).
    """

    name = "recurrent"

    def __init__(self, sensor_ids: list[str], d_hidden: int = 64, hidden: int = 64, **_: object):
        super().__init__()
        self.config = {"sensor_ids": list(sensor_ids), "d_hidden": d_hidden, "hidden": hidden}
        self.d_hidden = d_hidden
        self.encoder = nn.GRU(3, d_hidden, batch_first=True)
        self.dec_cell = nn.GRUCell(2, d_hidden)
        self.head = nn.Linear(d_hidden, 2)
        self.register_buffer("pf_mean", torch.zeros(2))
        self.register_buffer("pf_std", torch.ones(2))

    def set_norm_stats(self, stats: NormStats) -> None:
        dtype = self.pf_mean.dtype
        self.pf_mean = torch.tensor([stats.p_mean, stats.f_mean], dtype=dtype)
        self.pf_std = torch.tensor([stats.p_std, stats.f_std], dtype=dtype)

    def norm_stats(self) -> NormStats:
        return NormStats(
            float(self.pf_mean[0]), float(self.pf_std[0]),
            float(self.pf_mean[1]), float(self.pf_std[1]),
        )

    def _padded_history(self, plan: InstancePlan) -> tuple[Tensor, Tensor, Tensor]:
        """(S, T_max, 3) z-scored features, lengths, last (p_z, u) inputs."""
        s_count = plan.num_sensors
        lengths = plan.hist_len
        t_max = int(lengths.max()) if s_count else 0
        dtype = self.pf_mean.dtype
        feats = torch.zeros(s_count, t_max, 3, dtype=dtype)
        last_in = torch.zeros(s_count, 2, dtype=dtype)
        pos = 0
        for s in range(s_count):
            t_i = int(lengths[s])
            pf = plan.seq_pf[pos : pos + t_i]
            dt = plan.seq_dt[pos : pos + t_i]
            pos += t_i
            pf_z = (pf - self.pf_mean) / self.pf_std
            gaps = torch.empty(t_i, dtype=dtype)
            gaps[0] = pf[0, 0]
            if t_i > 1:
                # seq_dt is distance to the last end; consecutive differences
                # recover the inter-measurement gaps.
                gaps[1:] = dt[:-1] - dt[1:]
            feats[s, :t_i, 0] = pf_z[:, 0]
            feats[s, :t_i, 1] = pf_z[:, 1]
            feats[s, :t_i, 2] = gaps / self.pf_mean[0].clamp(min=1.0)
            last_in[s, 0] = pf_z[-1, 0]
            last_in[s, 1] = pf[-1, 1] / pf[-1, 0]
        return feats, lengths, last_in

    def encode(self, plan: InstancePlan) -> tuple[Tensor, Tensor]:
        feats, lengths, last_in = self._padded_history(plan)
        if plan.num_sensors == 0:
            return torch.zeros(0, self.d_hidden, dtype=feats.dtype), last_in
        packed = nn.utils.rnn.pack_padded_sequence(
            feats, lengths.clamp(min=1), batch_first=True, enforce_sorted=False
        )
        _, h_n = self.encoder(packed)
        return h_n.squeeze(0), last_in

    def forward(
        self,
        plan: InstancePlan,
        clamp: bool = False,
        tau: float | None = None,
        needed: Tensor | None = None,
    ):
        from .sapn import RolloutResult

        h, prev = self.encode(plan)
        s_count = plan.num_sensors
        dtype = self.pf_mean.dtype
        if tau is None:
            tau = float(plan.horizon)
        if needed is None:
            needed = plan.tgt_len
        needed_max = int(needed.max()) if s_count else 0
        max_steps = max(int(tau / 20.0) + 1, needed_max, 1) + 2

        delta = torch.ones(s_count, dtype=dtype)
        ps, us, deltas = [], [], []
        done = torch.zeros(s_count, dtype=torch.bool)
        steps = 0
        while True:
            h = self.dec_cell(prev, h)
            out = self.head(h)
            p = self.pf_mean[0] + self.pf_std[0] * out[:, 0]
            u = out[:, 1]
            if clamp:
                p = p.clamp(min=1.0)
                u = u.clamp(min=0.0)
            deltas.append(delta.unsqueeze(-1))
            ps.append(p.unsqueeze(-1))
            us.append(u.unsqueeze(-1))
            delta = delta + p
            prev = torch.stack([(p - self.pf_mean[0]) / self.pf_std[0], u], dim=-1)
            steps += 1
            done = (delta > tau) & (steps >= needed)
            if bool(done.all()) or steps >= max_steps:
                break
        return RolloutResult(
            p=torch.cat(ps, dim=-1),
            u=torch.cat(us, dim=-1),
            delta=torch.cat(deltas, dim=-1),
            steps=steps,
            invocations=steps,
            truncated=~done,
        )

    def loss(self, plan: InstancePlan) -> LossBreakdown:
        result = self.forward(plan, clamp=False)
        return hybrid_loss(
            result.p, result.u, result.delta,
            plan.tgt_p, plan.tgt_f, plan.tgt_delta, plan.tgt_zeta,
        )

    @torch.no_grad()
    def predict(self, plan: InstancePlan) -> list[SlotForecast]:
        from .model import rollout_to_forecasts

        return rollout_to_forecasts(plan, self.forward(plan, clamp=True))
