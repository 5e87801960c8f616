"""Asynchronous graph diffusion: attention over buffered neighbor messages."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .plan import InstancePlan, build_plan
from .time_encoding import TimeEncoding, soften_raw_interval_column
from .types import DiffusionGraph, ForecastInstance

EDGE_DIM = 2  # distance km, reachability flag
MEAS_DIM = 2  # cycle length, flow


def segment_softmax(scores: Tensor, segment: Tensor, num_segments: int) -> Tensor:
    """Softmax of ``scores`` within each segment id. Empty segments are fine
    as long as nothing indexes them."""
    if scores.numel() == 0:
        return scores
    maxes = torch.full((num_segments,), -torch.inf, dtype=scores.dtype)
    maxes = maxes.scatter_reduce(0, segment, scores.detach(), reduce="amax")
    ex = torch.exp(scores - maxes[segment])
    denom = torch.zeros(num_segments, dtype=scores.dtype).index_add(0, segment, ex)
    return ex / denom[segment]


class AsyncGraphConv(nn.Module):
    """Attention-weighted aggregation of a sensor's message buffer.

    The query is the sensor's own measurement (zeros for the valueless tail
    pass); every buffered message contributes its source measurement, the
    receiver's encoding of the time interval, and the edge features. Scores
    come from a bilinear-free additive attention; the weighted sum feeds a
    three-layer network producing the spatial representation. A convolution
    over an empty buffer yields the zero vector.
    """

    def __init__(self, d_phi: int, d_out: int, hidden: int = 64):
        super().__init__()
        phi_dim = d_phi + 1
        attn_in = MEAS_DIM + MEAS_DIM + phi_dim + EDGE_DIM
        agg_in = MEAS_DIM + phi_dim + EDGE_DIM
        self.w_a = nn.Linear(attn_in, hidden, bias=False)
        self.v = nn.Parameter(torch.randn(hidden) / hidden**0.5)
        self.mlp = nn.Sequential(
            nn.Linear(agg_in, hidden),
            nn.Tanh(),
            nn.Linear(hidden, hidden),
            nn.Tanh(),
            nn.Linear(hidden, d_out),
        )
        self.d_out = d_out
        soften_raw_interval_column(self.w_a.weight, 2 * MEAS_DIM)
        soften_raw_interval_column(self.mlp[0].weight, MEAS_DIM)

    def scores(self, query: Tensor, msg: Tensor, phi: Tensor, edge: Tensor) -> Tensor:
        feats = torch.cat([query, msg, phi, edge], dim=-1)
        return torch.tanh(self.w_a(feats)) @ self.v

    def attention_weights(
        self, query: Tensor, msg: Tensor, phi: Tensor, edge: Tensor
    ) -> Tensor:
        """Normalized weights over one buffer. ``query`` is a single
        measurement vector; the remaining arguments are (m, .) stacked."""
        if msg.shape[0] == 0:
            raise ValueError("attention over an empty buffer is undefined")
        beta = self.scores(query.expand(msg.shape[0], -1), msg, phi, edge)
        return torch.softmax(beta, dim=0)

    def aggregate(self, msg: Tensor, alpha: Tensor, phi: Tensor, edge: Tensor) -> Tensor:
        """Weighted sum of message features through the output network."""
        if alpha.shape[0] != msg.shape[0]:
            raise ValueError(
                f"weights ({alpha.shape[0]}) do not match buffer ({msg.shape[0]})"
            )
        pooled = (alpha.unsqueeze(-1) * torch.cat([msg, phi, edge], dim=-1)).sum(0)
        return self.mlp(pooled)

    def forward(
        self, plan: InstancePlan, time_enc: TimeEncoding, pf_mean: Tensor, pf_std: Tensor
    ) -> Tensor:
        """Spatial representation per convolution event, shape (E, d_out)."""
        num_events = plan.num_events
        if num_events == 0:
            return torch.zeros(0, self.d_out, dtype=pf_mean.dtype)
        query_z = (plan.ev_query_pf - pf_mean) / pf_std
        query_z = torch.where(
            plan.ev_is_tail.unsqueeze(-1), torch.zeros_like(query_z), query_z
        )
        agg_dim = MEAS_DIM + time_enc.out_dim + EDGE_DIM
        if plan.num_messages == 0:
            return torch.zeros(num_events, self.d_out, dtype=pf_mean.dtype)

        msg_z = (plan.msg_pf - pf_mean) / pf_std
        phi = time_enc(plan.ev_sensor_global[plan.msg_event], plan.msg_dt)
        beta = self.scores(query_z[plan.msg_event], msg_z, phi, plan.msg_edge)
        alpha = segment_softmax(beta, plan.msg_event, num_events)
        weighted = alpha.unsqueeze(-1) * torch.cat([msg_z, phi, plan.msg_edge], dim=-1)
        pooled = torch.zeros(num_events, agg_dim, dtype=weighted.dtype).index_add(
            0, plan.msg_event, weighted
        )
        counts = torch.zeros(num_events, dtype=torch.long).index_add(
            0, plan.msg_event, torch.ones_like(plan.msg_event)
        )
        nonempty = (counts > 0).unsqueeze(-1).to(pooled.dtype)
        # Empty buffers yield the zero vector, not the network image of zero.
        return self.mlp(pooled) * nonempty


def process_timeline(
    instance: ForecastInstance,
    graph: DiffusionGraph,
    conv: AsyncGraphConv,
    time_enc: TimeEncoding,
    pf_mean: Tensor,
    pf_std: Tensor,
) -> dict[str, tuple[list[Tensor], Tensor]]:
    """Replay an instance's measurements and return, per available sensor,
    the spatial representation of each of its measurements plus the tail
    representation over residual messages."""
    plan = build_plan(instance, graph, dtype=pf_mean.dtype)
    h_events = conv(plan, time_enc, pf_mean, pf_std)
    out: dict[str, tuple[list[Tensor], Tensor]] = {}
    pos = 0
    for s, sid in enumerate(plan.sensor_ids):
        t_i = int(plan.hist_len[s])
        per_meas = [h_events[plan.seq_event[pos + n]] for n in range(t_i)]
        pos += t_i
        out[sid] = (per_meas, h_events[plan.tail_event[s]])
    return out
