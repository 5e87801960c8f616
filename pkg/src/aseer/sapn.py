"""Semi-autoregressive decoding of variable-length cycle/flow sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .time_encoding import TimeEncoding, soften_raw_interval_column

# Hard floor used only to bound the number of decoding steps.
P_FLOOR_SECONDS = 20.0


@dataclass
class RolloutResult:
    """Dense per-slot outputs of a decoding run.

    ``delta`` holds each slot's cumulative elapsed time since the sensor's
    last observation (slot begins are ``t_last + delta``). During training
    the values are raw network outputs; at inference cycle lengths are
    clamped to >= 1 s and unit-time flows to >= 0.
    """

    p: Tensor          # (S, K) cycle lengths
    u: Tensor          # (S, K) unit-time flows
    delta: Tensor      # (S, K) cumulative elapsed at slot begin
    steps: int         # decoding steps performed
    invocations: int   # predictor calls (== steps)
    truncated: Tensor  # (S,) bool, step cap reached before the stop rule

    @property
    def flow(self) -> Tensor:
        return self.u * self.p


class SemiAutoregressiveDecoder(nn.Module):
    """Evolve a hidden state by elapsed time, then emit blocks of slots.

    Each step applies a gated recurrent update driven by the encoding of the
    time elapsed since the previous update, then a three-layer predictor
    maps [evolved state, initial state, encoding of total elapsed time] to
    ``step_size`` (cycle length, unit-time flow) pairs. Steps repeat until
    the emitted spans cover the requested horizon and slot count. With
    ``step_size`` 1 the loop is exactly a per-cycle autoregressive decoder;
    with ``step_size`` equal to the full length it is a one-shot decoder.
    """

    def __init__(self, d_hidden: int, d_phi: int, step_size: int, hidden: int = 64):
        super().__init__()
        if step_size < 1:
            raise ValueError(f"step_size must be >= 1, got {step_size}")
        self.d_hidden = d_hidden
        self.step_size = step_size
        phi_dim = d_phi + 1
        self.seu = nn.GRUCell(phi_dim, d_hidden)
        self.predictor = nn.Sequential(
            nn.Linear(2 * d_hidden + phi_dim, hidden),
            nn.Tanh(),
            nn.Linear(hidden, hidden),
            nn.Tanh(),
            nn.Linear(hidden, 2 * step_size),
        )
        soften_raw_interval_column(self.seu.weight_ih, 0)
        soften_raw_interval_column(self.predictor[0].weight, 2 * d_hidden)

    def evolve_state(self, h_prev: Tensor, phi_sigma: Tensor) -> Tensor:
        """Gated recurrent update of the traffic hidden state."""
        return self.seu(phi_sigma, h_prev)

    def predict_step(
        self, h: Tensor, h_init: Tensor, phi_delta: Tensor, p_mean: Tensor, p_std: Tensor
    ) -> tuple[Tensor, Tensor]:
        """One block of raw (cycle length, unit flow) pairs, each (S, xi).

        Cycle lengths are emitted in normalized units and mapped back to
        seconds with the training statistics; unit flows are emitted
        directly (they are naturally O(0.1) vehicles per second).
        """
        out = self.predictor(torch.cat([h, h_init, phi_delta], dim=-1))
        p_norm, u = out[:, : self.step_size], out[:, self.step_size :]
        return p_mean + p_std * p_norm, u

    @staticmethod
    def update_elapsed(delta: Tensor, p_step: Tensor) -> Tensor:
        """Elapsed time at the next step's first slot."""
        return delta + p_step.sum(dim=-1)

    @staticmethod
    def slot_elapsed(delta: Tensor, p_step: Tensor) -> Tensor:
        """Per-slot cumulative elapsed within a step: slot k starts after
        the step's opening elapsed plus the lengths predicted before it."""
        shifted = torch.cumsum(p_step, dim=-1) - p_step
        return delta.unsqueeze(-1) + shifted

    def max_steps(self, tau: float, needed_max: int) -> int:
        by_tau = math.ceil((tau / P_FLOOR_SECONDS) / self.step_size)
        by_len = math.ceil(needed_max / self.step_size) if needed_max > 0 else 0
        return max(by_tau, by_len, 1) + 2

    def rollout(
        self,
        h_init: Tensor,
        sensor_global: Tensor,
        time_enc: TimeEncoding,
        p_mean: Tensor,
        p_std: Tensor,
        tau: float,
        needed: Tensor,
        clamp: bool,
        max_steps: int | None = None,
    ) -> RolloutResult:
        """Iterate evolve/predict/accumulate until every sensor's emitted
        spans pass ``tau`` seconds and cover its ``needed`` slot count
        (always at least one step), bounded by a hard step cap."""
        s_count = h_init.shape[0]
        dtype = h_init.dtype
        needed_max = int(needed.max()) if s_count > 0 else 0
        if max_steps is None:
            max_steps = self.max_steps(tau, needed_max)

        delta = torch.ones(s_count, dtype=dtype)
        sigma = torch.ones(s_count, dtype=dtype)
        h = h_init
        ps: list[Tensor] = []
        us: list[Tensor] = []
        deltas: list[Tensor] = []
        done = torch.zeros(s_count, dtype=torch.bool)
        steps = 0
        while True:
            h = self.evolve_state(h, time_enc(sensor_global, sigma))
            p_step, u_step = self.predict_step(
                h, h_init, time_enc(sensor_global, delta), p_mean, p_std
            )
            if clamp:
                p_step = p_step.clamp(min=1.0)
                u_step = u_step.clamp(min=0.0)
            deltas.append(self.slot_elapsed(delta, p_step))
            ps.append(p_step)
            us.append(u_step)
            delta = self.update_elapsed(delta, p_step)
            sigma = p_step.sum(dim=-1)
            steps += 1
            emitted = steps * self.step_size
            done = (delta > tau) & (emitted >= needed)
            if bool(done.all()) or steps >= max_steps:
                break

        return RolloutResult(
            p=torch.cat(ps, dim=-1) if ps else torch.zeros(s_count, 0, dtype=dtype),
            u=torch.cat(us, dim=-1) if us else torch.zeros(s_count, 0, dtype=dtype),
            delta=torch.cat(deltas, dim=-1) if deltas else torch.zeros(s_count, 0, dtype=dtype),
            steps=steps,
            invocations=steps,
            truncated=~done,
        )
