"""Learnable continuous-time interval encodings, per sensor and shared."""

from __future__ import annotations

import torch
from torch import Tensor, nn


def _frequency_ladder(d_phi: int) -> Tensor:
    """Geometric frequency ladder, scaled for second-resolution intervals."""
    k = torch.arange(d_phi // 2, dtype=torch.get_default_dtype())
    return (1.0 / torch.pow(torch.tensor(10000.0), 2.0 * k / d_phi)) / 60.0


def soften_raw_interval_column(weight: Tensor, col: int, factor: float = 1e-3) -> None:
    """Rescale, at init, the weight column that reads the encoding's raw
    interval element.

    The raw element carries seconds (up to thousands); with default layer
    init it saturates tanh/sigmoid nonlinearities and freezes their
    gradients. Shrinking just that column keeps the channel learnable while
    starting the layer in its responsive range.
    """
    with torch.no_grad():
        weight[:, col] *= factor


class TimeEncoding(nn.Module):
    """Trigonometric interval embedding with a per-sensor flavor.

    A time interval dt maps to a ``d_phi + 1`` vector: element 0 is the raw
    dt, element 2k+1 is sin(w_k * dt) and element 2k+2 is cos(w_k * dt).
    Every sensor owns a private frequency set; a shared generic set is
    blended in with per-sensor weight exp(-lambda_i^2), so sensors with
    little data can lean on the shared encoding. Lambda starts near zero,
    putting almost all weight on the generic set initially.
    """

    def __init__(self, sensor_ids: list[str], d_phi: int = 16, generic_only: bool = False):
        super().__init__()
        if d_phi % 2 != 0 or d_phi < 2:
            raise ValueError(f"d_phi must be a positive even integer, got {d_phi}")
        self.sensor_ids = list(sensor_ids)
        self._index = {sid: i for i, sid in enumerate(self.sensor_ids)}
        self.d_phi = d_phi
        self.generic_only = generic_only
        ladder = _frequency_ladder(d_phi)
        n = len(self.sensor_ids)
        self.omega_personal = nn.Parameter(ladder.unsqueeze(0).repeat(n, 1))
        self.omega_generic = nn.Parameter(ladder.clone())
        self.lam = nn.Parameter(0.01 * torch.randn(n))

    @property
    def out_dim(self) -> int:
        return self.d_phi + 1

    def index_of(self, sensor_id: str) -> int:
        try:
            return self._index[sensor_id]
        except KeyError:
            raise KeyError(f"unknown sensor id: {sensor_id!r}") from None

    @staticmethod
    def _trig(omega: Tensor, dt: Tensor) -> Tensor:
        """Interleaved [sin(w_k dt), cos(w_k dt)] pairs, shape (..., d_phi)."""
        arg = omega * dt.unsqueeze(-1)
        return torch.stack([torch.sin(arg), torch.cos(arg)], dim=-1).flatten(-2)

    def personalized(self, sensor_idx: Tensor, dt: Tensor) -> Tensor:
        omega = self.omega_personal[sensor_idx]
        return torch.cat([dt.unsqueeze(-1), self._trig(omega, dt)], dim=-1)

    def generic(self, dt: Tensor) -> Tensor:
        return torch.cat([dt.unsqueeze(-1), self._trig(self.omega_generic, dt)], dim=-1)

    def mixture_weights(self, sensor_idx: Tensor) -> tuple[Tensor, Tensor]:
        """(personalized, generic) weights; they sum to one exactly."""
        w_g = torch.exp(-self.lam[sensor_idx] ** 2)
        return 1.0 - w_g, w_g

    def forward(self, sensor_idx: Tensor, dt: Tensor) -> Tensor:
        """Mixed encoding used throughout the model, shape (..., d_phi + 1).

        Element 0 stays the raw dt for any mixture weight; only the
        trigonometric part is blended.
        """
        dt = dt.to(self.omega_generic.dtype)
        if self.generic_only:
            return self.generic(dt)
        w_p, w_g = self.mixture_weights(sensor_idx)
        trig_p = self._trig(self.omega_personal[sensor_idx], dt)
        trig_g = self._trig(self.omega_generic, dt)
        mixed = w_p.unsqueeze(-1) * trig_p + w_g.unsqueeze(-1) * trig_g
        return torch.cat([dt.unsqueeze(-1), mixed], dim=-1)

    # Convenience wrappers keyed by sensor id, mainly for direct inspection.

    def encode_personalized(self, sensor_id: str, dt: float | Tensor) -> Tensor:
        idx = torch.tensor(self.index_of(sensor_id))
        dt = torch.as_tensor(dt, dtype=self.omega_generic.dtype)
        return self.personalized(idx, dt)

    def encode_generic(self, dt: float | Tensor) -> Tensor:
        dt = torch.as_tensor(dt, dtype=self.omega_generic.dtype)
        return self.generic(dt)

    def encode_mixed(self, sensor_id: str, dt: float | Tensor) -> Tensor:
        idx = torch.tensor(self.index_of(sensor_id))
        dt = torch.as_tensor(dt, dtype=self.omega_generic.dtype)
        return self.forward(idx, dt)
