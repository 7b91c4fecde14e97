"""Workload profiling and neural-core allocation.

The flow: run the network once with one core per layer, read each layer's
spike counters, turn them into a workload per layer and hand out a core
budget so that the slowest layer (largest workload per core) is as fast as
possible.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import engine
from .engine import LayerCounters
from .model import Conv, Dense, HardwareConfig, LayerSpec, NetworkSpec
from .perf import layer_names

PROFILE_VERSION = 1


class AllocationError(ValueError):
    pass


def workload(counters: LayerCounters, layer: LayerSpec) -> int:
    """``K*K * C_out * sum(S_i)`` for conv, ``out_features * S`` for dense, else 0."""
    if isinstance(layer, Conv):
        return layer.filter_size * layer.out_channels * counters.input_spikes
    if isinstance(layer, Dense):
        return layer.out_features * counters.input_spikes
    return 0


def _round_half_up(total: int, n: int) -> int:
    return (2 * total + n) // (2 * n)


@dataclass
class LayerProfile:
    name: str
    kind: str
    width: int  # C_out or out_features, the core cap
    input_spikes: int
    workload: int


@dataclass
class WorkloadProfile:
    layers: list  # LayerProfile per compute layer
    samples: int = 1
    seed: int = 0
    runs: list = field(default_factory=list, repr=False)  # NetworkRun per sample

    @property
    def workloads(self) -> list:
        return [l.workload for l in self.layers]

    @property
    def caps(self) -> list:
        return [l.width for l in self.layers]

    def as_dict(self) -> dict:
        return {
            "format_version": PROFILE_VERSION,
            "samples": self.samples,
            "seed": self.seed,
            "layers": [vars(l).copy() for l in self.layers],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "WorkloadProfile":
        layers = [LayerProfile(**{k: l[k] for k in ("name", "kind", "width", "input_spikes", "workload")})
                  for l in doc["layers"]]
        return cls(layers, int(doc.get("samples", 1)), int(doc.get("seed", 0)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "kind", "input_spikes", "workload", "share"])
        total = sum(self.workloads)
        for l in self.layers:
            share = l.workload / total if total else 0.0
            writer.writerow([l.name, l.kind, l.input_spikes, l.workload, f"{share:.6f}"])
        return buf.getvalue()


def profile_runs(spec: NetworkSpec, runs: list, seed: int = 0) -> WorkloadProfile:
    """Average per-layer input spikes over runs (half-up) and compute workloads."""
    if not runs:
        raise ValueError("profiling needs at least one sample")
    names = layer_names(spec)
    layers = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == "pool":
            continue
        total = sum(r.counters[i].input_spikes for r in runs)
        s = _round_half_up(total, len(runs))
        width = layer.out_channels if isinstance(layer, Conv) else layer.out_features
        fs = layer.filter_size if isinstance(layer, Conv) else 1
        layers.append(LayerProfile(names[i], layer.kind, width, s, fs * width * s))
    return WorkloadProfile(layers, len(runs), seed, list(runs))


def profile(spec: NetworkSpec, weights: list, samples, seed: int = 0) -> WorkloadProfile:
    """Naive one-core-per-layer mapping over every sample image."""
    hw = HardwareConfig.uniform(spec, 1, 1)
    runs = [engine.run_network(spec, weights, hw, img, seed) for img in samples]
    return profile_runs(spec, runs, seed)


# ---------------------------------------------------------------------------
# allocation


def bottleneck(workloads, counts) -> Fraction:
    return max(Fraction(w, n) for w, n in zip(workloads, counts))


def allocate(workloads, budget: int, caps=None) -> list:
    """Integer core counts minimising ``max(W_l / N_l)`` with ``sum(N_l) <= budget``.

    Greedy water-filling: start every layer at one core and repeatedly give a
    core to the layer with the largest ``W / N`` that is still below its cap
    (earlier layer on ties).  Comparisons are exact.
    """
    w = [int(v) for v in workloads]
    n_layers = len(w)
    caps = [None] * n_layers if caps is None else list(caps)
    if any(v < 0 for v in w):
        raise AllocationError("workloads must be non-negative")
    if budget < n_layers:
        raise AllocationError(f"budget {budget} is below the layer count {n_layers}")
    if any(c is not None and c < 1 for c in caps):
        raise AllocationError("every cap must allow at least one core")
    counts = [1] * n_layers
    for _ in range(budget - n_layers):
        best = None
        for i in range(n_layers):
            if caps[i] is not None and counts[i] >= caps[i]:
                continue
            # w[i]/counts[i] > w[best]/counts[best], cross-multiplied
            if best is None or w[i] * counts[best] > w[best] * counts[i]:
                best = i
        if best is None:
            break
        counts[best] += 1
    return counts


def allocate_profile(prof: WorkloadProfile, budget: int) -> list:
    return allocate(prof.workloads, budget, prof.caps)


def exhaustive_optimum(workloads, budget: int, caps=None) -> Fraction:
    """Brute-force min over all allocations of ``max(W_l / N_l)``."""
    n_layers = len(workloads)
    caps = [budget if c is None else min(c, budget) for c in (caps or [None] * n_layers)]
    best = None

    def rec(i, left, counts):
        nonlocal best
        if i == n_layers:
            val = bottleneck(workloads, counts)
            if best is None or val < best:
                best = val
            return
        remaining = n_layers - i - 1
        for n in range(1, min(caps[i], left - remaining) + 1):
            rec(i + 1, left - n, counts + [n])

    if budget < n_layers:
        raise AllocationError("infeasible budget")
    rec(0, budget, [])
    return best


def load_profile(path) -> WorkloadProfile:
    with open(path) as fh:
        return WorkloadProfile.from_dict(json.load(fh))


def nc_fragment(prof: WorkloadProfile, counts: list) -> dict:
    """JSON fragment with per-layer ``nc_count`` ready to merge into a manifest."""
    return {
        "format_version": PROFILE_VERSION,
        "layers": [{"name": l.name, "nc_count": n} for l, n in zip(prof.layers, counts)],
        "bottleneck": str(bottleneck(prof.workloads, counts)),
        "bottleneck_value": float(bottleneck(prof.workloads, counts)),
    }


def per_sample_workloads(spec: NetworkSpec, runs: list) -> np.ndarray:
    """(samples, compute layers) matrix of unaveraged workloads."""
    rows = []
    for r in runs:
        rows.append([workload(c, l) for c, l in zip(r.counters, spec.layers) if l.kind != "pool"])
    return np.array(rows, dtype=np.int64)
