"""Dense, sparsity-oblivious reference forward pass.

Every output neuron gathers from its full receptive field at every timestep,
with no events, cores or chunks.  In the default ``"fxp"`` mode it uses the
same Q3.29 primitives as the engine, so the two must agree bit for bit.  The
``"real"`` mode runs the same recurrence in float64 and is only meant to
catch systematic fixed-point mistakes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import codec, fxp
from .codec import SpikeTensor
from .model import Conv, MaxPool, NetworkSpec


@dataclass
class OracleResult:
    decision: codec.Decision
    outputs: list = field(repr=False)  # SpikeTensor per layer
    traces: list = field(default_factory=list, repr=False)


def _gather_conv(x: np.ndarray, w: np.ndarray, layer: Conv) -> np.ndarray:
    """Cross-correlation of one timestep: x (C_in, H, W) -> (C_out, Ho, Wo)."""
    k = layer.kernel
    if layer.padding == "same":
        p = (k - 1) // 2
        x = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (C_in, Ho, Wo, K, K)
    return np.einsum("chwij,ocij->ohw", win, w)


def _pool(bits: np.ndarray, z: int) -> np.ndarray:
    t, c, h, w = bits.shape
    out = np.zeros((t, c, h // z, w // z), dtype=bool)
    for y in range(h // z):
        for x in range(w // z):
            out[:, :, y, x] = bits[:, :, y * z:(y + 1) * z, x * z:(x + 1) * z].any(axis=(2, 3))
    return out


def _lif_fxp(u, drive, bias, beta_raw):
    u = fxp.add_raw(u, drive)
    u = fxp.add_raw(u, bias)
    pre = u
    s = fxp.spike_check_raw(u)
    u = np.where(s, fxp.soft_reset_raw(u), u)
    return fxp.mul_raw(beta_raw, u), s, pre


def _lif_real(u, drive, bias, beta):
    u = u + drive + bias
    pre = u
    s = u >= 1.0
    u = np.where(s, u - 1.0, u)
    return beta * u, s, pre


def forward_spikes(spec: NetworkSpec, weights: list, spikes: SpikeTensor, *,
                   mode: str = "fxp", trace: bool = False) -> OracleResult:
    if mode not in ("fxp", "real"):
        raise ValueError(f"unknown oracle mode {mode!r}")
    real = mode == "real"
    beta = float(spec.beta) if real else spec.beta.raw
    lif = _lif_real if real else _lif_fxp

    x = spikes.bits
    outputs, traces = [], []
    wi = 0
    for layer in spec.layers:
        t_steps = x.shape[0]
        if isinstance(layer, MaxPool):
            x = _pool(x, layer.window)
            outputs.append(SpikeTensor(x))
            traces.append(None)
            continue

        lw = weights[wi]
        wi += 1
        w = np.asarray(lw.w, dtype=np.int64)
        b = np.asarray(lw.bias, dtype=np.int64)
        if real:
            w = w / fxp.SCALE
            b = b / fxp.SCALE
        if isinstance(layer, Conv):
            shrink = 0 if layer.padding == "same" else layer.kernel - 1
            shape = (layer.out_channels, x.shape[2] - shrink, x.shape[3] - shrink)
            bias = b[:, None, None]
        else:
            shape = (layer.out_features,)
            bias = b
        u = np.zeros(shape, dtype=w.dtype)
        out = np.zeros((t_steps,) + shape, dtype=bool)
        layer_trace = []
        for t in range(t_steps):
            xt = x[t].astype(w.dtype)
            if isinstance(layer, Conv):
                drive = _gather_conv(xt, w, layer)
            else:
                drive = w @ xt.reshape(-1)
            u, out[t], pre = lif(u, drive, bias, beta)
            if trace:
                layer_trace.append(pre / fxp.SCALE if not real else pre)
        x = out if isinstance(layer, Conv) else out.reshape(t_steps, -1, 1, 1)
        outputs.append(SpikeTensor(x))
        traces.append(np.array(layer_trace) if trace else None)

    totals = x.reshape(x.shape[0], -1).sum(axis=0)
    decision = codec.pop_decode(totals, spec.classes, spec.pop_per_class)
    return OracleResult(decision, outputs, traces if trace else [])


def dense_forward(spec: NetworkSpec, weights: list, image: np.ndarray, seed: int = 0, *,
                  mode: str = "fxp", trace: bool = False) -> OracleResult:
    """Rate-encode with the engine's seed semantics, then run densely."""
    spikes = codec.rate_encode(image, spec.timesteps, seed)
    return forward_spikes(spec, weights, spikes, mode=mode, trace=trace)
