import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikeaccel import engine, partition, perf, synth
from spikeaccel.engine import LayerCounters
from spikeaccel.model import Conv, Dense, HardwareConfig, LayerHW, NetworkSpec


def _conv_counters(events, c_out, h, w):
    events = np.asarray(events, dtype=np.int64)
    t, c_in = events.shape
    return LayerCounters("conv", (c_in, h, w), (c_out, h, w), events)


def _dense_counters(events, n_in, n_out):
    events = np.asarray(events, dtype=np.int64).reshape(-1, 1)
    return LayerCounters("dense", (n_in, 1, 1), (n_out, 1, 1), events)


class TestConvCycles:
    def test_zero_spikes(self):
        cnt = _conv_counters([[0, 0], [0, 0]], 8, 5, 5)
        c = perf.estimate_conv_cycles(cnt, Conv(8, 3, "same", 2), LayerHW(3, 1))
        assert c.accum_cycles == 0
        assert c.activ_cycles == 2 * 3 * 25

    def test_single_event(self):
        cnt = _conv_counters([[1]], 8, 4, 4)
        c = perf.estimate_conv_cycles(cnt, Conv(8, 3, "same", 1), LayerHW(8, 1))
        assert c.accum_cycles == 9

    def test_full_parallel_divides(self):
        cnt = _conv_counters([[3, 5], [7, 0]], 6, 6, 6)
        layer = Conv(6, 3, "same", 2)
        one = perf.estimate_conv_cycles(cnt, layer, LayerHW(1, 1)).accum_cycles
        full = perf.estimate_conv_cycles(cnt, layer, LayerHW(6, 1)).accum_cycles
        assert one == 6 * full

    def test_penc_and_overhead(self):
        cnt = _conv_counters([[2, 1]], 4, 8, 8)
        c = perf.estimate_conv_cycles(cnt, Conv(4, 3, "same", 2), LayerHW(2, 2), penc_width=32, pipeline_fill=4)
        assert c.penc_cycles == 3 + 2 * 2
        assert c.pipeline_overhead_cycles == 4 * 2 * 2 * 2
        assert c.layer_total == max(c.penc_cycles, c.accum_cycles) + c.activ_cycles + c.pipeline_overhead_cycles

    @settings(max_examples=60)
    @given(st.lists(st.integers(0, 40), min_size=1, max_size=6), st.integers(1, 12), st.integers(1, 12),
           st.integers(1, 8))
    def test_monotone(self, events, c_out, n, chunks):
        cnt = _conv_counters([events], c_out, 4, 4)
        layer = Conv(c_out, 3, "same", len(events))
        n = min(n, c_out)
        base = perf.estimate_conv_cycles(cnt, layer, LayerHW(n, chunks)).accum_cycles
        if n < c_out:
            assert perf.estimate_conv_cycles(cnt, layer, LayerHW(n + 1, chunks)).accum_cycles <= base
        assert perf.estimate_conv_cycles(cnt, layer, LayerHW(n, chunks + 1)).accum_cycles >= base


class TestDenseCycles:
    def test_paired_weights(self):
        c = perf.estimate_dense_cycles(_dense_counters([10], 64, 256), Dense(256, 64), LayerHW(8, 1))
        assert c.accum_cycles == 160

    def test_no_spikes(self):
        c = perf.estimate_dense_cycles(_dense_counters([0, 0], 64, 256), Dense(256, 64), LayerHW(8, 1))
        assert c.accum_cycles == 0
        assert c.activ_cycles == 2 * 32

    def test_one_cycle_per_event(self):
        c = perf.estimate_dense_cycles(_dense_counters([4, 3], 30, 10), Dense(10, 30), LayerHW(10, 1))
        assert c.accum_cycles == 7


class TestReport:
    def _run(self, topology="8x8-4C3-3", nc=1, chunks=1, seed=0):
        spec = NetworkSpec.from_topology(topology, timesteps=2, beta="0.15", classes=3)
        rng = np.random.default_rng(seed)
        weights = synth.random_weights(spec, rng)
        hw = HardwareConfig.uniform(spec, nc, chunks)
        run = engine.run_network(spec, weights, hw, synth.random_image(spec.input_shape, rng), seed)
        return spec, hw, run

    def test_single_layer(self):
        spec = NetworkSpec.from_topology("4x4-3", timesteps=2, beta="0.5", classes=3)
        rng = np.random.default_rng(1)
        weights = synth.random_weights(spec, rng)
        hw = HardwareConfig.uniform(spec)
        run = engine.run_network(spec, weights, hw, synth.random_image(spec.input_shape, rng))
        rep = perf.cycle_report(spec, hw, run.counters)
        assert rep.network_total == rep.layers[0].layer_total

    def test_fps_arithmetic(self):
        rep = perf.CycleReport([perf.LayerCycles("FC1", "dense", accum_cycles=125000)], 125_000_000)
        assert rep.fps == 1000

    @pytest.mark.parametrize("seed", range(3))
    def test_fps_exact(self, seed):
        spec, hw, run = self._run(seed=seed)
        rep = perf.cycle_report(spec, hw, run.counters)
        assert rep.fps * rep.network_total == Fraction(rep.clock_hz)

    def test_pool_free(self):
        spec, hw, run = self._run("8x8-4C3-P2-3")
        rep = perf.cycle_report(spec, hw, run.counters)
        assert [l.name for l in rep.layers] == ["CONV1", "POOL1", "FC1"]
        assert rep.layers[1].layer_total == 0

    def test_workload_matches_unit_accum(self):
        spec, hw, run = self._run("8x8x2-4C3-P2-5C3-3")
        rep = perf.cycle_report(spec, hw, run.counters)
        for layer, cnt, cyc in zip(spec.layers, run.counters, rep.layers):
            if isinstance(layer, Conv):
                assert cyc.accum_cycles == partition.workload(cnt, layer)

    def test_resources(self):
        spec = NetworkSpec.from_topology("28x28-32C3-32C3-P3-10C3-10", timesteps=3, beta="0.15", classes=10,
                                         pop_per_class=50)
        hw = HardwareConfig.from_counts([8, 32, 4, 2], [2, 1, 1, 1])
        res = perf.estimate_resources(spec, hw)
        assert res[0].membrane_bits == 8 * 32 * 392
        assert res[1].weight_ff_bits == 32 * 9 * 32 * 32
        assert res[2].kind == "pool" and res[2].membrane_bits == 0
        assert res[4].uram_rows == 250 * 810
        assert res[4].uram_tiles == -(-250 * 810 // 4096)
        assert res[4].membrane_bits == 2 * 32 * 250

    def test_json_deterministic(self):
        a = perf.report(*self._run(nc=2, chunks=3)).to_json()
        b = perf.report(*self._run(nc=2, chunks=3)).to_json()
        assert a == b
        doc = json.loads(a)
        assert doc["format_version"] == perf.REPORT_VERSION
        assert doc["seed"] == 0
        assert len(doc["layers"]) == 2

    def test_text_and_csv(self):
        rep = perf.report(*self._run("8x8-4C3-P2-3"))
        text = rep.to_text()
        assert "predicted class" in text and "FPS" in text
        lines = rep.to_csv().splitlines()
        assert lines[0].startswith("name,kind,nc_count")
        assert len(lines) == 4
