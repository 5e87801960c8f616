"""Masked training losses over padded target slots."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
from torch import Tensor


@dataclass
class LossBreakdown:
    cycle: Tensor
    timing: Tensor
    flow: Tensor
    total: Tensor
    masked_slots: int

    def detach_floats(self) -> tuple[float, float, float, float]:
        return (
            float(self.cycle.detach()),
            float(self.timing.detach()),
            float(self.flow.detach()),
            float(self.total.detach()),
        )


def _masked_mae(pred: Tensor, target: Tensor, mask: Tensor, name: str) -> Tensor:
    denom = mask.sum()
    if float(denom) == 0.0:
        warnings.warn(f"{name}: no observed slots; loss term is 0")
        return torch.zeros((), dtype=pred.dtype)
    return (torch.abs(pred - target) * mask).sum() / denom


def loss_cycle(p_hat: Tensor, p_target: Tensor, zeta: Tensor) -> Tensor:
    """Mean absolute cycle-length error over observed slots."""
    return _masked_mae(p_hat, p_target, zeta, "loss_cycle")


def loss_timing(delta_hat: Tensor, delta_target: Tensor, zeta: Tensor) -> Tensor:
    """Mean absolute error of cumulative elapsed times over observed slots."""
    return _masked_mae(delta_hat, delta_target, zeta, "loss_timing")


def loss_flow(u_hat: Tensor, p_target: Tensor, f_target: Tensor, zeta: Tensor) -> Tensor:
    """Mean absolute flow error with true cycle lengths multiplying the
    predicted unit-time flows, so flow learning is insulated from cycle
    errors."""
    return _masked_mae(u_hat * p_target, f_target, zeta, "loss_flow")


def hybrid_loss(
    p_hat: Tensor,
    u_hat: Tensor,
    delta_hat: Tensor,
    p_target: Tensor,
    f_target: Tensor,
    delta_target: Tensor,
    zeta: Tensor,
) -> LossBreakdown:
    """Unweighted sum of the three masked terms.

    Predictions may carry more slots than the targets (decoding emits whole
    blocks); only the first ``L`` columns are compared.
    """
    l_cols = p_target.shape[1]
    lp = loss_cycle(p_hat[:, :l_cols], p_target, zeta)
    ld = loss_timing(delta_hat[:, :l_cols], delta_target, zeta)
    lf = loss_flow(u_hat[:, :l_cols], p_target, f_target, zeta)
    return LossBreakdown(lp, ld, lf, lp + ld + lf, int(zeta.sum()))
