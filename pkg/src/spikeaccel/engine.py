"""Event-driven inference core.

Convolution is computed in scatter form: the event control unit (ECU)
compresses each ``(t, c_in)`` input plane into spike events once and
broadcasts them to every neural core (NC).  Core ``k`` of a layer with ``N``
cores owns the output feature maps ``o`` with ``o % N == k``; the controller
strides through OFMs ``N`` at a time, so at any moment each core holds the
membrane potentials of one OFM, restricted to the current spatial chunk.

Per chunk the membranes are zeroed once per image; then for each timestep all
input channels are accumulated and the activation pass runs:
``u += bias; s = u >= 1.0; u -= s; u = beta * u``.

All arithmetic goes through :mod:`spikeaccel.fxp` raws.  Adder overflow wraps
and is counted exactly in sequential order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import codec, fxp
from .codec import SpikeTensor
from .model import Conv, Dense, HardwareConfig, LayerHW, LayerWeights, MaxPool, NetworkSpec, chunk_ranges


@dataclass
class LayerCounters:
    """Performance counters of one layer for one image."""

    kind: str
    in_shape: tuple  # (C, H, W)
    out_shape: tuple  # (C, H, W)
    events: np.ndarray  # spike events per (t, c_in) plane
    accum_updates: int = 0
    activations: int = 0
    wraps: int = 0
    output_spikes: int = 0

    @property
    def input_spikes(self) -> int:
        return int(self.events.sum())

    @property
    def timesteps(self) -> int:
        return int(self.events.shape[0])

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_shape": list(self.in_shape),
            "out_shape": list(self.out_shape),
            "input_spikes": self.input_spikes,
            "events_per_plane": self.events.tolist(),
            "accum_updates": self.accum_updates,
            "activations": self.activations,
            "wraps": self.wraps,
            "output_spikes": self.output_spikes,
        }


@dataclass
class NeuralCore:
    offset: int
    ofms: list  # OFM indices in processing order

    def __repr__(self) -> str:
        return f"NeuralCore(offset={self.offset}, ofms={self.ofms})"


def assign_cores(n_out: int, nc_count: int) -> list:
    """Offset/stride mapping: core ``k`` gets ``k, k+N, k+2N, ...``."""
    return [NeuralCore(k, list(range(k, n_out, nc_count))) for k in range(nc_count)]


def ofm_groups(cores: list) -> list:
    """OFMs in flight together, one per core, as the controller strides by N."""
    depth = max(len(c.ofms) for c in cores)
    return [np.array([c.ofms[g] for c in cores if g < len(c.ofms)]) for g in range(depth)]


# ---------------------------------------------------------------------------
# address generation


def _kernel_order(k: int):
    # kernel column outer, kernel row inner
    kc, kr = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    return kr.reshape(-1), kc.reshape(-1)


def _pad(kernel: int, padding: str) -> int:
    return (kernel - 1) // 2 if padding == "same" else 0


def affected_updates(spike, kernel: int, padding: str, ofm_dims) -> list:
    """``[((kr, kc), (nr, nc)), ...]``: output neuron ``(nr, nc)`` gets ``w[kr][kc]``."""
    r, c = spike
    h, w = ofm_dims
    pad = _pad(kernel, padding)
    out = []
    for kc in range(kernel):
        for kr in range(kernel):
            nr, nc = r + pad - kr, c + pad - kc
            if 0 <= nr < h and 0 <= nc < w:
                out.append(((kr, kc), (nr, nc)))
    return out


def plane_addresses(events, in_width: int, kernel: int, padding: str, ofm_dims):
    """Vectorised :func:`affected_updates` for a whole event list.

    Returns flat output-neuron indices and flat kernel indices (``kr*K + kc``)
    in processing order: event by event, then kernel column/row.
    """
    ev = np.asarray(events, dtype=np.int64)
    h, w = ofm_dims
    kr, kc = _kernel_order(kernel)
    pad = _pad(kernel, padding)
    r = ev // in_width
    c = ev % in_width
    nr = r[:, None] + pad - kr[None, :]
    nc = c[:, None] + pad - kc[None, :]
    ok = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
    nidx = (nr * w + nc)[ok]
    kidx = np.broadcast_to(kr * kernel + kc, ok.shape)[ok]
    return nidx, kidx


# ---------------------------------------------------------------------------
# sequential-order accumulation with exact wrap counting


@dataclass
class _Batch:
    """Updates of one event list into one membrane chunk, grouped by neuron."""

    kidx: np.ndarray  # weight column per update, sorted by neuron (stable)
    targets: np.ndarray  # distinct neurons (chunk-local)
    starts: np.ndarray
    ends: np.ndarray
    gid: np.ndarray

    @classmethod
    def build(cls, nidx: np.ndarray, kidx: np.ndarray) -> "_Batch":
        order = np.argsort(nidx, kind="stable")
        n = nidx[order]
        new = np.ones(n.size, dtype=bool)
        new[1:] = n[1:] != n[:-1]
        starts = np.flatnonzero(new)
        ends = np.append(starts[1:] - 1, n.size - 1)
        return cls(kidx[order], n[starts], starts, ends, np.cumsum(new) - 1)

    @property
    def size(self) -> int:
        return int(self.kidx.size)


def _accumulate(mem: np.ndarray, batch: _Batch, wvals: np.ndarray) -> int:
    """Apply ``mem[:, n] += w`` update by update; returns the wrap count.

    ``wvals`` is (cores, updates) in the batch's sorted order.  Each neuron's
    running sum is reconstructed with a prefix sum so the wrap count matches a
    sequential 32-bit adder.
    """
    csum = np.cumsum(wvals, axis=1)
    base = np.zeros((wvals.shape[0], batch.starts.size), dtype=np.int64)
    base[:, 1:] = csum[:, batch.starts[1:] - 1]
    run = mem[:, batch.targets][:, batch.gid] + csum - base[:, batch.gid]
    bucket = fxp.wrap_buckets(run)
    prev = np.empty_like(bucket)
    prev[:, 1:] = bucket[:, :-1]
    prev[:, batch.starts] = 0
    mem[:, batch.targets] = fxp.wrap32_array(run[:, batch.ends])
    return int(np.abs(bucket - prev).sum())


def _activate(mem: np.ndarray, bias: np.ndarray, beta_raw: int, counter: fxp.WrapCounter,
              trace: np.ndarray | None = None) -> np.ndarray:
    """Bias, three-bit threshold, soft reset, leak.  Updates ``mem`` in place.

    ``trace`` receives the potential after bias, before thresholding.
    """
    u = fxp.add_raw(mem, bias[:, None], counter)
    if trace is not None:
        trace[...] = u
    spikes = fxp.spike_check_raw(u)
    # only taken where u >= 1.0, so the subtraction never wraps
    u = np.where(spikes, fxp.soft_reset_raw(u), u)
    mem[...] = fxp.mul_raw(beta_raw, u)
    return spikes


# ---------------------------------------------------------------------------
# layers


def _compress_planes(spikes: SpikeTensor, rng=None) -> list:
    t_steps, c_in = spikes.dims[:2]
    planes = []
    for t in range(t_steps):
        row = []
        for c in range(c_in):
            ev = codec.penc_compress(spikes.plane(t, c))
            if rng is not None:
                rng.shuffle(ev)
            row.append(np.asarray(ev, dtype=np.int64))
        planes.append(row)
    return planes


def run_conv_layer(spikes: SpikeTensor, layer: Conv, weights: LayerWeights, hw: LayerHW,
                   beta: fxp.Fx32, *, event_rng=None, membrane_trace: np.ndarray | None = None) -> tuple:
    """Scatter convolution + LIF for one conv layer over all timesteps.

    ``event_rng`` optionally shuffles every event list (the result must not
    change, since accumulation commutes).  ``membrane_trace``, if given, is a
    ``(T, C_out, Ho*Wo)`` int array filled with pre-threshold potentials.
    """
    t_steps, c_in, h, w = spikes.dims
    if c_in != layer.in_channels:
        raise ValueError(f"conv expects {layer.in_channels} input channels, got {c_in}")
    k = layer.kernel
    pad = _pad(k, layer.padding)
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    c_out = layer.out_channels
    wk = np.asarray(weights.w, dtype=np.int64).reshape(c_out, c_in, k * k)
    bias = np.asarray(weights.bias, dtype=np.int64)

    planes = _compress_planes(spikes, event_rng)
    events = np.array([[p.size for p in row] for row in planes], dtype=np.int64).reshape(t_steps, c_in)
    counters = LayerCounters("conv", (c_in, h, w), (c_out, ho, wo), events)
    wraps = fxp.WrapCounter()

    # address generation once per plane, then split per chunk
    chunks = chunk_ranges(ho * wo, hw.chunk_count)
    batches = {}
    for t in range(t_steps):
        for c in range(c_in):
            if planes[t][c].size == 0:
                continue
            nidx, kidx = plane_addresses(planes[t][c], w, k, layer.padding, (ho, wo))
            for ci, (lo, hi) in enumerate(chunks):
                sel = (nidx >= lo) & (nidx < hi)
                if sel.any():
                    batches[t, c, ci] = _Batch.build(nidx[sel] - lo, kidx[sel])

    out = np.zeros((t_steps, c_out, ho * wo), dtype=bool)
    cores = assign_cores(c_out, hw.nc_count)
    for ofms in ofm_groups(cores):
        for ci, (lo, hi) in enumerate(chunks):
            mem = np.zeros((ofms.size, hi - lo), dtype=np.int64)
            for t in range(t_steps):
                for c in range(c_in):
                    batch = batches.get((t, c, ci))
                    if batch is None:
                        continue
                    wraps.count += _accumulate(mem, batch, wk[ofms, c][:, batch.kidx])
                    counters.accum_updates += ofms.size * batch.size
                view = None if membrane_trace is None else np.empty_like(mem)
                out[t, ofms, lo:hi] = _activate(mem, bias[ofms], beta.raw, wraps, view)
                if view is not None:
                    membrane_trace[t, ofms, lo:hi] = view
                counters.activations += mem.size

    counters.wraps = wraps.count
    result = SpikeTensor(out.reshape(t_steps, c_out, ho, wo))
    counters.output_spikes = result.total()
    return result, counters


def flatten_spikes(spikes: SpikeTensor) -> np.ndarray:
    """``(T, C, H, W)`` -> ``(T, C*H*W)`` in ``[C][H][W]`` order."""
    t = spikes.dims[0]
    return spikes.bits.reshape(t, -1)


def run_dense_layer(spikes: SpikeTensor, layer: Dense, weights: LayerWeights, hw: LayerHW,
                    beta: fxp.Fx32, *, event_rng=None, membrane_trace: np.ndarray | None = None) -> tuple:
    """Fully-connected LIF layer; every input event touches every output neuron.

    ``membrane_trace`` is an optional ``(T, out_features)`` int array.
    """
    flat = flatten_spikes(spikes)
    t_steps, n_in = flat.shape
    if n_in != layer.in_features:
        raise ValueError(f"dense expects {layer.in_features} inputs, got {n_in}")
    n_out = layer.out_features
    wm = np.asarray(weights.w, dtype=np.int64)
    bias = np.asarray(weights.bias, dtype=np.int64)

    plane_events = []
    for t in range(t_steps):
        ev = codec.penc_compress(flat[t])
        if event_rng is not None:
            event_rng.shuffle(ev)
        plane_events.append(np.asarray(ev, dtype=np.int64))
    events = np.array([[e.size] for e in plane_events], dtype=np.int64)
    counters = LayerCounters("dense", tuple(spikes.dims[1:]), (n_out, 1, 1), events)
    wraps = fxp.WrapCounter()

    out = np.zeros((t_steps, n_out), dtype=bool)
    for ofms in ofm_groups(assign_cores(n_out, hw.nc_count)):
        mem = np.zeros((ofms.size, 1), dtype=np.int64)
        for t in range(t_steps):
            ev = plane_events[t]
            if ev.size:
                run = mem + np.cumsum(wm[ofms][:, ev], axis=1)
                bucket = fxp.wrap_buckets(run)
                wraps.count += int(np.abs(np.diff(bucket, axis=1, prepend=0)).sum())
                mem[:, 0] = fxp.wrap32_array(run[:, -1])
                counters.accum_updates += ofms.size * ev.size
            view = None if membrane_trace is None else np.empty_like(mem)
            out[t, ofms] = _activate(mem, bias[ofms], beta.raw, wraps, view)[:, 0]
            if view is not None:
                membrane_trace[t, ofms] = view[:, 0]
            counters.activations += ofms.size

    counters.wraps = wraps.count
    result = SpikeTensor(out.reshape(t_steps, n_out, 1, 1))
    counters.output_spikes = result.total()
    return result, counters


def run_maxpool(spikes: SpikeTensor, window: int) -> SpikeTensor:
    """OR over non-overlapping ``window x window`` tiles; ragged edges dropped."""
    t, c, h, w = spikes.dims
    ho, wo = h // window, w // window
    tiles = spikes.bits[:, :, : ho * window, : wo * window].reshape(t, c, ho, window, wo, window)
    return SpikeTensor(tiles.any(axis=(3, 5)))


def _pool_counters(spikes: SpikeTensor, result: SpikeTensor) -> LayerCounters:
    counters = LayerCounters("pool", tuple(spikes.dims[1:]), tuple(result.dims[1:]), spikes.plane_counts())
    counters.output_spikes = result.total()
    return counters


# ---------------------------------------------------------------------------
# network


@dataclass
class NetworkRun:
    decision: codec.Decision
    counters: list  # one LayerCounters per layer (pools included)
    outputs: list = field(repr=False)  # SpikeTensor per layer
    input_spikes: SpikeTensor = field(repr=False)
    seed: int = 0

    @property
    def label(self) -> int:
        return self.decision.label

    @property
    def output_counts(self) -> np.ndarray:
        """Total spikes of every classifier neuron over all timesteps."""
        last = self.outputs[-1].bits
        return last.reshape(last.shape[0], -1).sum(axis=0, dtype=np.int64)


def run_spikes(spec: NetworkSpec, weights: list, hw: HardwareConfig, spikes: SpikeTensor,
               *, seed: int = 0, event_rng=None) -> NetworkRun:
    """Run every layer in sequence on an already encoded input."""
    hw.validate(spec)
    h, w, c = spec.input_shape
    if spikes.dims != (spec.timesteps, c, h, w):
        raise ValueError(f"input spikes {spikes.dims} != {(spec.timesteps, c, h, w)}")
    x = spikes
    outputs, counters = [], []
    compute_i = 0
    for layer in spec.layers:
        if isinstance(layer, MaxPool):
            y = run_maxpool(x, layer.window)
            cnt = _pool_counters(x, y)
        else:
            fn = run_conv_layer if isinstance(layer, Conv) else run_dense_layer
            y, cnt = fn(x, layer, weights[compute_i], hw.layers[compute_i], spec.beta, event_rng=event_rng)
            compute_i += 1
        outputs.append(y)
        counters.append(cnt)
        x = y
    last = outputs[-1].bits
    totals = last.reshape(last.shape[0], -1).sum(axis=0)
    decision = codec.pop_decode(totals, spec.classes, spec.pop_per_class)
    return NetworkRun(decision, counters, outputs, spikes, seed)


def run_network(spec: NetworkSpec, weights: list, hw: HardwareConfig, image: np.ndarray,
                seed: int = 0, *, event_rng=None) -> NetworkRun:
    """Rate-encode ``image`` and run the whole network, layer after layer."""
    spikes = codec.rate_encode(image, spec.timesteps, seed)
    return run_spikes(spec, weights, hw, spikes, seed=seed, event_rng=event_rng)
