"""Length-transformable temporal convolution via meta-derived filters."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .agdn import segment_softmax
from .time_encoding import soften_raw_interval_column


class MetaFilterConv(nn.Module):
    """Derive one convolution filter row per sequence position and contract.

    A shared trunk maps each input vector to a hidden code; per feature map
    a private head turns the code into raw filter scores. Scores are
    normalized with an exponential over the temporal axis, independently per
    (feature map, input channel), so every filter channel sums to one no
    matter the sequence length and the parameter count never depends on it.
    The convolution is a single full-length inner product per feature map.

    ``interval_col`` names the input column carrying a raw time interval, if
    any, so its init scale can be softened.
    """

    def __init__(self, d_in: int, d_out: int, hidden: int = 64,
                 interval_col: int | None = None):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        self.trunk = nn.Sequential(
            nn.Linear(d_in, hidden),
            nn.Tanh(),
            nn.Linear(hidden, hidden),
            nn.Tanh(),
        )
        self.heads = nn.Linear(hidden, d_out * d_in)
        if interval_col is not None:
            soften_raw_interval_column(self.trunk[0].weight, interval_col)

    def raw_scores(self, z: Tensor) -> Tensor:
        """Unnormalized filter scores, shape (T, d_out, d_in)."""
        return self.heads(self.trunk(z)).view(z.shape[0], self.d_out, self.d_in)

    def derive_filters(self, z: Tensor) -> Tensor:
        """Temporally normalized filters for one sequence, (T, d_out, d_in)."""
        if z.shape[0] < 1:
            raise ValueError("sequence must contain at least one element")
        raw = self.raw_scores(z)
        raw = raw - raw.detach().amax(dim=0, keepdim=True)
        ex = torch.exp(raw)
        return ex / ex.sum(dim=0, keepdim=True)

    def convolve(self, z: Tensor, filters: Tensor) -> Tensor:
        """h[d] = sum_n filters[n, d] . z[n], shape (d_out,)."""
        if filters.shape[0] != z.shape[0]:
            raise ValueError(
                f"filter length {filters.shape[0]} does not match sequence {z.shape[0]}"
            )
        return (filters * z.unsqueeze(1)).sum(dim=(0, 2))

    def forward(self, z: Tensor) -> Tensor:
        return self.convolve(z, self.derive_filters(z))

    def forward_segments(self, z: Tensor, segment: Tensor, num_segments: int) -> Tensor:
        """Batched version over concatenated sequences.

        ``z`` is (P, d_in) with ``segment`` giving each row's sequence id;
        normalization runs within segments. Returns (num_segments, d_out).
        """
        if z.shape[0] == 0:
            return torch.zeros(num_segments, self.d_out, dtype=z.dtype)
        raw = self.raw_scores(z).reshape(z.shape[0], -1)
        weights = segment_softmax_columns(raw, segment, num_segments)
        weights = weights.view(z.shape[0], self.d_out, self.d_in)
        contrib = (weights * z.unsqueeze(1)).sum(-1)
        return torch.zeros(num_segments, self.d_out, dtype=z.dtype).index_add(
            0, segment, contrib
        )


def segment_softmax_columns(scores: Tensor, segment: Tensor, num_segments: int) -> Tensor:
    """Column-wise segment softmax for (P, C) scores."""
    cols = scores.shape[1]
    maxes = torch.full((num_segments, cols), -torch.inf, dtype=scores.dtype)
    maxes = maxes.scatter_reduce(
        0, segment.unsqueeze(-1).expand(-1, cols), scores.detach(), reduce="amax"
    )
    ex = torch.exp(scores - maxes[segment])
    denom = torch.zeros(num_segments, cols, dtype=scores.dtype).index_add(0, segment, ex)
    return ex / denom[segment]


def fuse(h_temporal: Tensor, h_tail: Tensor) -> Tensor:
    """Elementwise integration of temporal and residual-spatial parts."""
    if h_temporal.shape != h_tail.shape:
        raise ValueError(f"width mismatch: {tuple(h_temporal.shape)} vs {tuple(h_tail.shape)}")
    return h_temporal + h_tail


# Kept for API symmetry with the segment variant.
def segment_softmax_rows(scores: Tensor, segment: Tensor, num_segments: int) -> Tensor:
    return segment_softmax(scores, segment, num_segments)
