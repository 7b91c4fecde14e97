"""Cycle-approximate timing and resource estimates from engine counters.

Timing is derived after the fact from the per-layer counters rather than by
stepping a cycle-level model.  Per compute layer::

    layer_total = max(penc, accum) + activ + pipeline_overhead

PENC compression overlaps accumulation, activation runs after it, and layers
execute strictly one after another, so the network latency is the sum.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .engine import LayerCounters, NetworkRun
from .model import Conv, Dense, HardwareConfig, LayerHW, NetworkSpec

REPORT_VERSION = 1
URAM_DEPTH = 4096
WEIGHT_BITS = 32


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


@dataclass
class LayerCycles:
    name: str
    kind: str
    penc_cycles: int = 0
    accum_cycles: int = 0
    activ_cycles: int = 0
    pipeline_overhead_cycles: int = 0

    @property
    def layer_total(self) -> int:
        return max(self.penc_cycles, self.accum_cycles) + self.activ_cycles + self.pipeline_overhead_cycles

    def as_dict(self) -> dict:
        d = asdict(self)
        d["layer_total"] = self.layer_total
        return d


def estimate_conv_cycles(counters: LayerCounters, layer: Conv, hw: LayerHW, *,
                         penc_width: int = 32, pipeline_fill: int = 4, name: str = "conv") -> LayerCycles:
    """Cycle fields of one conv layer.

    Each OFM group (``ceil(C_out / N)`` of them) replays every event list once
    per spatial chunk, and each event walks all ``K*K`` coefficients at one
    neuron update per cycle.
    """
    t_steps, c_in = counters.events.shape
    _, h_in, w_in = counters.in_shape
    _, h_out, w_out = counters.out_shape
    groups = _ceil(layer.out_channels, hw.nc_count)
    events = counters.input_spikes
    planes = t_steps * c_in
    return LayerCycles(
        name,
        "conv",
        penc_cycles=events + planes * _ceil(h_in * w_in, penc_width),
        accum_cycles=groups * hw.chunk_count * layer.filter_size * events,
        activ_cycles=t_steps * groups * h_out * w_out,
        pipeline_overhead_cycles=pipeline_fill * groups * hw.chunk_count * planes,
    )


def estimate_dense_cycles(counters: LayerCounters, layer: Dense, hw: LayerHW, *,
                          penc_width: int = 32, pipeline_fill: int = 4, name: str = "dense") -> LayerCycles:
    """Cycle fields of one dense layer; paired weights give two updates per cycle per core."""
    t_steps = counters.timesteps
    events = counters.input_spikes
    return LayerCycles(
        name,
        "dense",
        penc_cycles=events + t_steps * _ceil(layer.in_features, penc_width),
        accum_cycles=_ceil(layer.out_features, 2 * hw.nc_count) * events,
        activ_cycles=t_steps * _ceil(layer.out_features, hw.nc_count),
        pipeline_overhead_cycles=pipeline_fill * t_steps,
    )


@dataclass
class LayerResources:
    name: str
    kind: str
    membrane_bits: int = 0
    weight_ff_bits: int = 0
    uram_rows: int = 0
    uram_tiles: int = 0


def estimate_resources(spec: NetworkSpec, hw: HardwareConfig) -> list:
    """Storage estimates computable from the model and hardware config alone."""
    out = []
    ci = 0
    for name, layer, (h, w, _) in zip(layer_names(spec), spec.layers, spec.shapes()):
        if isinstance(layer, Conv):
            lhw = hw.layers[ci]
            ci += 1
            out.append(LayerResources(
                name, "conv",
                membrane_bits=lhw.nc_count * WEIGHT_BITS * _ceil(h * w, lhw.chunk_count),
                weight_ff_bits=WEIGHT_BITS * layer.filter_size * layer.in_channels * layer.out_channels,
            ))
        elif isinstance(layer, Dense):
            lhw = hw.layers[ci]
            ci += 1
            rows = _ceil(layer.out_features, 2) * layer.in_features
            out.append(LayerResources(
                name, "dense",
                membrane_bits=lhw.nc_count * WEIGHT_BITS * _ceil(layer.out_features, lhw.nc_count),
                uram_rows=rows,
                uram_tiles=_ceil(rows, URAM_DEPTH),
            ))
        else:
            out.append(LayerResources(name, "pool"))
    return out


def layer_names(spec: NetworkSpec) -> list:
    """``CONV1, CONV2, POOL1, ..., FC1`` numbered per kind."""
    seen = {}
    names = []
    for layer in spec.layers:
        tag = {"conv": "CONV", "pool": "POOL", "dense": "FC"}[layer.kind]
        seen[tag] = seen.get(tag, 0) + 1
        names.append(f"{tag}{seen[tag]}")
    return names


@dataclass
class CycleReport:
    layers: list
    clock_hz: int
    resources: list = field(default_factory=list)

    @property
    def network_total(self) -> int:
        return sum(l.layer_total for l in self.layers)

    @property
    def fps(self) -> Fraction | None:
        total = self.network_total
        return Fraction(self.clock_hz, total) if total else None


def cycle_report(spec: NetworkSpec, hw: HardwareConfig, counters: list) -> CycleReport:
    names = layer_names(spec)
    rows = []
    ci = 0
    knobs = dict(penc_width=hw.penc_width, pipeline_fill=hw.pipeline_fill)
    for name, layer, cnt in zip(names, spec.layers, counters):
        if isinstance(layer, Conv):
            rows.append(estimate_conv_cycles(cnt, layer, hw.layers[ci], name=name, **knobs))
            ci += 1
        elif isinstance(layer, Dense):
            rows.append(estimate_dense_cycles(cnt, layer, hw.layers[ci], name=name, **knobs))
            ci += 1
        else:
            # OR pooling is applied on the fly while the next layer fetches
            rows.append(LayerCycles(name, "pool"))
    clock_hz = Fraction(str(hw.clock_mhz)) * 1_000_000
    if clock_hz.denominator != 1:
        raise ValueError(f"clock {hw.clock_mhz} MHz is not a whole number of Hz")
    return CycleReport(rows, int(clock_hz), estimate_resources(spec, hw))


# ---------------------------------------------------------------------------
# full run report


@dataclass
class RunReport:
    spec: NetworkSpec
    hw: HardwareConfig
    run: NetworkRun
    cycles: CycleReport
    oracle_match: bool | None = None

    def as_dict(self) -> dict:
        fps = self.cycles.fps
        return {
            "format_version": REPORT_VERSION,
            "seed": self.run.seed,
            "prediction": {
                "label": self.run.decision.label,
                "no_spike": self.run.decision.no_spike,
                "class_totals": list(self.run.decision.class_totals),
            },
            "clock_hz": self.cycles.clock_hz,
            "penc_width": self.hw.penc_width,
            "pipeline_fill": self.hw.pipeline_fill,
            "network_total_cycles": self.cycles.network_total,
            "fps": float(fps) if fps is not None else None,
            "fps_exact": f"{fps.numerator}/{fps.denominator}" if fps is not None else None,
            "oracle_match": self.oracle_match,
            "layers": [
                {**c.as_dict(), **{k: v for k, v in asdict(r).items() if k not in ("name", "kind")},
                 "counters": cnt.as_dict(), **_hw_fields(self.spec, self.hw, i)}
                for i, (c, r, cnt) in enumerate(zip(self.cycles.layers, self.cycles.resources, self.run.counters))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        fields = ["name", "kind", "nc_count", "chunk_count", "input_spikes", "penc_cycles", "accum_cycles",
                  "activ_cycles", "pipeline_overhead_cycles", "layer_total"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for i, (c, cnt) in enumerate(zip(self.cycles.layers, self.run.counters)):
            row = c.as_dict()
            row.update(_hw_fields(self.spec, self.hw, i))
            row["input_spikes"] = cnt.input_spikes
            writer.writerow({k: row.get(k, "") for k in fields})
        return buf.getvalue()

    def to_text(self) -> str:
        d = self.run.decision
        lines = [
            f"predicted class: {d.label}" + ("  (no-spike)" if d.no_spike else ""),
            f"seed: {self.run.seed}",
        ]
        if self.oracle_match is not None:
            lines.append(f"oracle check: {'match' if self.oracle_match else 'MISMATCH'}")
        header = ("layer", "NC", "chunks", "spikes", "penc", "accum", "activ", "overhead", "total")
        rows = []
        for i, (c, cnt) in enumerate(zip(self.cycles.layers, self.run.counters)):
            hwf = _hw_fields(self.spec, self.hw, i)
            rows.append((c.name, hwf.get("nc_count", "-"), hwf.get("chunk_count", "-"), cnt.input_spikes,
                         c.penc_cycles, c.accum_cycles, c.activ_cycles, c.pipeline_overhead_cycles,
                         c.layer_total))
        lines.append(format_table(header, rows))
        fps = self.cycles.fps
        lines.append(f"network total: {self.cycles.network_total} cycles")
        if fps is not None:
            lines.append(f"throughput: {float(fps):.1f} FPS at {self.cycles.clock_hz / 1e6:g} MHz")
        return "\n".join(lines) + "\n"


def _hw_fields(spec: NetworkSpec, hw: HardwareConfig, layer_index: int) -> dict:
    ci = sum(1 for l in spec.layers[:layer_index] if l.kind != "pool")
    if spec.layers[layer_index].kind == "pool":
        return {}
    h = hw.layers[ci]
    return {"nc_count": h.nc_count, "chunk_count": h.chunk_count}


def format_table(header, rows) -> str:
    cells = [tuple(str(v) for v in header)] + [tuple(str(v) for v in r) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    out = []
    for k, r in enumerate(cells):
        out.append("  ".join(v.ljust(wd) if i == 0 else v.rjust(wd) for i, (v, wd) in enumerate(zip(r, widths))))
        if k == 0:
            out.append("  ".join("-" * wd for wd in widths))
    return "\n".join(out)


def report(spec: NetworkSpec, hw: HardwareConfig, run: NetworkRun, oracle_match: bool | None = None) -> RunReport:
    return RunReport(spec, hw, run, cycle_report(spec, hw, run.counters), oracle_match)
