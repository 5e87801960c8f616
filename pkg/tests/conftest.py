"""Shared fixtures: finite-difference checks, numpy reference math, builders."""

from __future__ import annotations

import math

import numpy as np
import torch

from aseer.data import build_graph
from aseer.types import ForecastInstance, Measurement, SensorWindow, TargetSlot


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


def fd_gradcheck(loss_fn, params, eps: float = 1e-6) -> float:
    """Max mismatch between analytic and central-difference gradients.

    Relative error where the gradient is meaningful, absolute agreement for
    vanishing gradients. All tensors must be float64.
    """
    params = [p for p in params if p.requires_grad]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            g = torch.zeros_like(p) if g is None else g
            flat = p.view(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                dn = loss_fn().item()
                flat[i] = orig
                fd = (up - dn) / (2 * eps)
                an = gflat[i].item()
                scale = max(abs(an), abs(fd))
                if scale < 1e-6:
                    err = abs(an - fd)
                else:
                    err = abs(an - fd) / scale
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Numpy reference math (kept independent of the torch forward paths)
# ---------------------------------------------------------------------------


def np_linear(layer, x: np.ndarray) -> np.ndarray:
    w = layer.weight.detach().cpu().numpy().astype(np.float64)
    b = layer.bias.detach().cpu().numpy().astype(np.float64) if layer.bias is not None else 0.0
    return x @ w.T + b


def np_mlp(seq, x: np.ndarray) -> np.ndarray:
    """Evaluate an alternating Linear/Tanh torch Sequential in numpy."""
    out = x
    for layer in seq:
        if isinstance(layer, torch.nn.Linear):
            out = np_linear(layer, out)
        elif isinstance(layer, torch.nn.Tanh):
            out = np.tanh(out)
        else:
            raise TypeError(f"unsupported layer {type(layer)}")
    return out


def np_time_encoding(enc, sensor_idx: int, dt: float) -> np.ndarray:
    """Mixed per-sensor encoding replicated with plain numpy."""
    d_half = enc.d_phi // 2
    omega_p = enc.omega_personal.detach().cpu().numpy().astype(np.float64)[sensor_idx]
    omega_g = enc.omega_generic.detach().cpu().numpy().astype(np.float64)
    lam = float(enc.lam.detach().cpu().numpy()[sensor_idx])

    def trig(omega):
        out = np.empty(2 * d_half)
        out[0::2] = np.sin(omega * dt)
        out[1::2] = np.cos(omega * dt)
        return out

    if enc.generic_only:
        mixed = trig(omega_g)
    else:
        w_g = math.exp(-lam * lam)
        mixed = (1.0 - w_g) * trig(omega_p) + w_g * trig(omega_g)
    return np.concatenate([[dt], mixed])


def np_gru_cell(cell, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Reference gated recurrent update matching torch's parameter layout."""
    w_ih = cell.weight_ih.detach().cpu().numpy().astype(np.float64)
    w_hh = cell.weight_hh.detach().cpu().numpy().astype(np.float64)
    b_ih = cell.bias_ih.detach().cpu().numpy().astype(np.float64)
    b_hh = cell.bias_hh.detach().cpu().numpy().astype(np.float64)
    hs = h.shape[-1]

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    gi = x @ w_ih.T + b_ih
    gh = h @ w_hh.T + b_hh
    r = sigmoid(gi[..., :hs] + gh[..., :hs])
    z = sigmoid(gi[..., hs : 2 * hs] + gh[..., hs : 2 * hs])
    n = np.tanh(gi[..., 2 * hs :] + r * gh[..., 2 * hs :])
    return (1.0 - z) * n + z * h


def agdn_oracle(instance, graph, conv, enc, pf_mean, pf_std):
    """Brute-force spatial representations: for every convolution, rescan the
    whole timeline to rebuild the buffer from scratch, then evaluate the
    attention and aggregation formulas in numpy.

    Returns {sensor_id: (list of per-measurement vectors, tail vector)}.
    """
    pf_mean = np.asarray(pf_mean, dtype=np.float64)
    pf_std = np.asarray(pf_std, dtype=np.float64)
    w_a = conv.w_a.weight.detach().cpu().numpy().astype(np.float64)
    v = conv.v.detach().cpu().numpy().astype(np.float64)
    d_out = conv.d_out

    active = sorted(sid for sid, w in instance.sensors.items() if w.available)

    def all_messages_to(dst: str):
        """Every (emit_t, src, values, edge) that diffusion sends to dst."""
        out = []
        for src in active:
            if (src, dst) not in graph.edges:
                continue
            edge = graph.edges[(src, dst)]
            for m in instance.sensors[src].history:
                out.append((m.end, src, float(m.length), float(m.flow),
                            edge.distance_km, float(edge.reachable)))
        out.sort(key=lambda r: (r[0], r[1]))
        return out

    def convolve(dst, query_pf, lo, hi, q_time, tail):
        """Aggregate messages to dst with emit time in (lo, hi]."""
        rows = [r for r in all_messages_to(dst) if lo < r[0] <= hi]
        if not rows:
            return np.zeros(d_out)
        sensor_idx = graph.index_of(dst)
        q = (np.asarray(query_pf) - pf_mean) / pf_std if not tail else np.zeros(2)
        betas, feats = [], []
        for emit_t, _src, p, f, dist, reach in rows:
            x = (np.array([p, f]) - pf_mean) / pf_std
            dt = (emit_t - q_time) if tail else (q_time - emit_t)
            phi = np_time_encoding(enc, sensor_idx, float(dt))
            edge = np.array([dist, reach])
            betas.append(v @ np.tanh(w_a @ np.concatenate([q, x, phi, edge])))
            feats.append(np.concatenate([x, phi, edge]))
        betas = np.asarray(betas)
        alpha = np.exp(betas - betas.max())
        alpha = alpha / alpha.sum()
        pooled = (alpha[:, None] * np.asarray(feats)).sum(axis=0)
        return np_mlp(conv.mlp, pooled)

    out = {}
    for sid in active:
        history = instance.sensors[sid].history
        per_meas = []
        prev = -math.inf
        for m in history:
            per_meas.append(convolve(sid, (m.length, m.flow), prev, m.end, m.end, False))
            prev = m.end
        t_last = history[-1].end
        tail = convolve(sid, (0.0, 0.0), t_last, math.inf, t_last, True)
        out[sid] = (per_meas, tail)
    return out


def ttcn_oracle(meta, z: np.ndarray) -> np.ndarray:
    """Direct double-loop filter derivation and convolution in numpy."""
    t_len, d_in = z.shape
    d_out = meta.d_out
    raw = np.empty((t_len, d_out, d_in))
    for n in range(t_len):
        code = np_mlp(meta.trunk, z[n])
        raw[n] = np_linear(meta.heads, code).reshape(d_out, d_in)
    h = np.zeros(d_out)
    for d in range(d_out):
        for c in range(d_in):
            col = raw[:, d, c]
            ex = np.exp(col - col.max())
            f = ex / ex.sum()
            for n in range(t_len):
                h[d] += f[n] * z[n, c]
    return h


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def series_window(
    sensor_id: str,
    cycles: list[tuple[int, int, float]],
    observed: list[bool] | None = None,
    anchor: int | None = None,
) -> SensorWindow:
    """SensorWindow with history given directly as (begin, length, flow)."""
    ms = [Measurement(sensor_id, b, p, f) for b, p, f in cycles]
    if observed is not None:
        ms = [m for m, o in zip(ms, observed) if o]
    if anchor is not None:
        ms = [m for m in ms if m.end <= anchor]
    return SensorWindow(sensor_id, ms, [])


def random_instance(rng: np.random.Generator, n_sensors: int, max_meas: int):
    """Random geometry, reachability, and irregular histories with gaps."""
    sensors = []
    for i in range(n_sensors):
        sensors.append(
            (f"x{i:02d}", 30.0 + float(rng.random()) * 0.012, 120.0 + float(rng.random()) * 0.012)
        )
    reach = []
    for i in range(n_sensors):
        for j in range(n_sensors):
            if i != j and rng.random() < 0.4:
                reach.append((sensors[i][0], sensors[j][0]))
    graph = build_graph(sensors, reach, epsilon_km=1.0)

    anchor = 2000
    windows = {}
    for sid, _, _ in sensors:
        n_meas = int(rng.integers(0, max_meas + 1))
        begin = int(rng.integers(0, 120))
        history = []
        for _ in range(n_meas):
            length = int(rng.integers(20, 120))
            m = Measurement(sid, begin, length, float(rng.random() * 30))
            if m.end > anchor:
                break
            if rng.random() > 0.25:  # withheld measurements create gaps
                history.append(m)
            begin = m.end + 1 + int(rng.integers(0, 40))
        windows[sid] = SensorWindow(sid, history, [])
    instance = ForecastInstance(anchor, anchor + 1, 600, windows)
    return instance, graph


def toy_targets(slots: list[tuple[int, int, float, int, int]]) -> list[TargetSlot]:
    """TargetSlots from (begin, length, flow, mask, elapsed) tuples."""
    return [TargetSlot(b, p, f, m, e) for b, p, f, m, e in slots]
