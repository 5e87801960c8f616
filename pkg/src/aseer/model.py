"""Full forecasting model: spatial diffusion, temporal convolution, decoding."""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor, nn

from .agdn import AsyncGraphConv
from .data import NormStats
from .losses import LossBreakdown, hybrid_loss
from .plan import InstancePlan
from .sapn import RolloutResult, SemiAutoregressiveDecoder
from .time_encoding import TimeEncoding
from .ttcn import MetaFilterConv, fuse
from .types import SlotForecast

MEAS_DIM = 2


class ASeer(nn.Module):
    """Asynchronous spatio-temporal forecaster for irregular cycle series.

    Ablation switches: ``no_agdn`` zeroes every spatial representation (the
    diffusion pass is skipped entirely); ``no_pte`` replaces the per-sensor
    time encodings with the shared generic one.
    """

    name = "aseer"

    def __init__(
        self,
        sensor_ids: list[str],
        d_phi: int = 16,
        d_hidden: int = 64,
        step_size: int = 12,
        hidden: int = 64,
        no_agdn: bool = False,
        no_pte: bool = False,
    ):
        super().__init__()
        self.config = {
            "sensor_ids": list(sensor_ids),
            "d_phi": d_phi,
            "d_hidden": d_hidden,
            "step_size": step_size,
            "hidden": hidden,
            "no_agdn": no_agdn,
            "no_pte": no_pte,
        }
        self.no_agdn = no_agdn
        self.d_hidden = d_hidden
        self.time_enc = TimeEncoding(sensor_ids, d_phi, generic_only=no_pte)
        self.conv = AsyncGraphConv(d_phi, d_hidden, hidden)
        self.seq_dim = MEAS_DIM + d_hidden + d_phi + 1
        self.meta = MetaFilterConv(self.seq_dim, d_hidden, hidden,
                                   interval_col=MEAS_DIM + d_hidden)
        self.decoder = SemiAutoregressiveDecoder(d_hidden, d_phi, step_size, hidden)
        self.register_buffer("pf_mean", torch.zeros(2))
        self.register_buffer("pf_std", torch.ones(2))

    @property
    def step_size(self) -> int:
        return self.decoder.step_size

    def set_norm_stats(self, stats: NormStats) -> None:
        dtype = self.pf_mean.dtype
        self.pf_mean = torch.tensor([stats.p_mean, stats.f_mean], dtype=dtype)
        self.pf_std = torch.tensor([stats.p_std, stats.f_std], dtype=dtype)

    def norm_stats(self) -> NormStats:
        return NormStats(
            float(self.pf_mean[0]), float(self.pf_std[0]),
            float(self.pf_mean[1]), float(self.pf_std[1]),
        )

    def encode(self, plan: InstancePlan) -> Tensor:
        """Spatiotemporal representation per available sensor, (S, D)."""
        s_count = plan.num_sensors
        dtype = self.pf_mean.dtype
        if s_count == 0:
            return torch.zeros(0, self.d_hidden, dtype=dtype)
        p_rows = plan.seq_pf.shape[0]
        if self.no_agdn:
            h_seq = torch.zeros(p_rows, self.d_hidden, dtype=dtype)
            h_tail = torch.zeros(s_count, self.d_hidden, dtype=dtype)
        else:
            h_events = self.conv(plan, self.time_enc, self.pf_mean, self.pf_std)
            h_seq = h_events[plan.seq_event]
            h_tail = h_events[plan.tail_event]
        x_z = (plan.seq_pf - self.pf_mean) / self.pf_std
        phi = self.time_enc(plan.seq_sensor_global, plan.seq_dt)
        z = torch.cat([x_z, h_seq, phi], dim=-1)
        h_temporal = self.meta.forward_segments(z, plan.seq_seg, s_count)
        h = fuse(h_temporal, h_tail)
        # The decoder reads the state through a fixed zero-mean projection.
        # The temporally normalized filters pass every input channel's mean
        # straight through, so the raw-interval channel plants a huge
        # common-mode offset in all state dimensions; rejecting that one
        # direction here is a constrained parameterization of the consuming
        # layers and keeps their gradients conditioned on the actual signal.
        return h - h.mean(dim=-1, keepdim=True)

    def forward(
        self,
        plan: InstancePlan,
        clamp: bool = False,
        tau: float | None = None,
        needed: Tensor | None = None,
    ) -> RolloutResult:
        h = self.encode(plan)
        if tau is None:
            tau = float(plan.horizon)
        if needed is None:
            needed = plan.tgt_len
        return self.decoder.rollout(
            h, plan.sensor_global, self.time_enc,
            self.pf_mean[0], self.pf_std[0],
            tau=tau, needed=needed, clamp=clamp,
        )

    def loss(self, plan: InstancePlan) -> LossBreakdown:
        result = self.forward(plan, clamp=False)
        return hybrid_loss(
            result.p, result.u, result.delta,
            plan.tgt_p, plan.tgt_f, plan.tgt_delta, plan.tgt_zeta,
        )

    @torch.no_grad()
    def predict(self, plan: InstancePlan) -> list[SlotForecast]:
        """Clamped forecasts chained from each sensor's last observation."""
        result = self.forward(plan, clamp=True)
        return rollout_to_forecasts(plan, result)


def rollout_to_forecasts(plan: InstancePlan, result: RolloutResult) -> list[SlotForecast]:
    out: list[SlotForecast] = []
    p = result.p.detach().cpu().numpy().astype(np.float64)
    u = result.u.detach().cpu().numpy().astype(np.float64)
    delta = result.delta.detach().cpu().numpy().astype(np.float64)
    for s, sid in enumerate(plan.sensor_ids):
        t_last = float(plan.t_last[s])
        out.append(
            SlotForecast(
                sensor_id=sid,
                t_last=int(t_last),
                begin=t_last + delta[s],
                length=p[s].copy(),
                flow=u[s] * p[s],
                unit_flow=u[s].copy(),
                elapsed=delta[s].copy(),
            )
        )
    return out


def build_model(model_type: str, sensor_ids: list[str], **kwargs) -> nn.Module:
    """Factory keyed by the CLI model name."""
    if model_type == "aseer":
        return ASeer(sensor_ids, **kwargs)
    if model_type == "recurrent":
        from .baselines import RecurrentForecaster

        kwargs.pop("step_size", None)
        kwargs.pop("no_agdn", None)
        kwargs.pop("no_pte", None)
        return RecurrentForecaster(sensor_ids, **kwargs)
    raise ValueError(f"unknown model type: {model_type!r}")
