import json

import numpy as np
import pytest

from spikeaccel import fxp, synth
from spikeaccel.model import (Conv, Dense, HardwareConfig, LayerHW, LayerWeights, ManifestIOError, MaxPool,
                              ModelError, NetworkSpec, TopologyParseError, chunk_ranges, infer_shapes,
                              load_manifest, parse_topology, render_topology, save_manifest)


class TestParse:
    def test_network_one(self):
        topo = parse_topology("28x28-32C3-32C3-P3-10C3-10", pop_per_class=50)
        assert topo.input_shape == (28, 28, 1)
        assert [type(l) for l in topo.layers] == [Conv, Conv, MaxPool, Conv, Dense]
        assert [l.out_channels for l in topo.layers if isinstance(l, Conv)] == [32, 32, 10]
        assert topo.layers[2].window == 3
        assert topo.layers[-1].out_features == 500
        assert topo.layers[1].in_channels == 32
        assert topo.layers[-1].in_features == 10 * 9 * 9

    def test_network_three(self):
        topo = parse_topology("32x32x3-32C3-P2-32C3-P2-256-10", pop_per_class=40)
        assert topo.input_shape == (32, 32, 3)
        assert topo.layers[0].in_channels == 3
        dense = [l for l in topo.layers if isinstance(l, Dense)]
        assert [d.out_features for d in dense] == [256, 400]
        assert dense[0].in_features == 32 * 8 * 8

    def test_dims_only(self):
        topo = parse_topology("28x28")
        assert topo.layers == ()

    def test_mp_synonym(self):
        a = parse_topology("28x28-32C3-MP2-10")
        b = parse_topology("28x28-32C3-P2-10")
        assert a == b

    @pytest.mark.parametrize("text,pos", [("28x28-32X3", 1), ("28-3C3", 0), ("8x8-4C3-P0", 2), ("8x8-4C3--2", 2)])
    def test_bad_token(self, text, pos):
        with pytest.raises(TopologyParseError) as exc:
            parse_topology(text)
        assert exc.value.position == pos

    def test_shape_error(self):
        with pytest.raises(ModelError):
            parse_topology("4x4-P5-10")

    @pytest.mark.parametrize("text", ["28x28-32C3-32C3-P3-10C3-10", "32x32x3-32C3-P2-32C3-P2-256-10",
                                      "28x28-32C3-P2-32C3-P2-256-10", "5x7x2-3C1-4", "28x28"])
    def test_render_roundtrip(self, text):
        for pop in (1, 3):
            if text == "28x28" and pop != 1:
                continue
            topo = parse_topology(text, pop)
            assert render_topology(topo, pop) == text
            assert parse_topology(render_topology(topo, pop), pop) == topo

    def test_random_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            spec = synth.random_spec(rng)
            pads = [l.padding for l in spec.layers if isinstance(l, Conv)]
            text = render_topology(spec.topology, spec.pop_per_class)
            assert parse_topology(text, spec.pop_per_class, pads) == spec.topology


class TestShapes:
    def test_same(self):
        assert infer_shapes((28, 28, 1), [Conv(8, 3)]) == [(28, 28, 8)]

    def test_pool2(self):
        assert infer_shapes((28, 28, 1), [MaxPool(2)]) == [(14, 14, 1)]

    def test_pool3_floor(self):
        assert infer_shapes((28, 28, 1), [MaxPool(3)]) == [(28 // 3, 28 // 3, 1)] == [(9, 9, 1)]

    def test_valid(self):
        assert infer_shapes((10, 12, 2), [Conv(4, 3, "valid")]) == [(8, 10, 4)]

    def test_dense_flattens(self):
        assert infer_shapes((4, 4, 2), [Dense(7)]) == [(1, 1, 7)]

    def test_non_positive(self):
        with pytest.raises(ModelError):
            infer_shapes((2, 2, 1), [Conv(4, 3, "valid")])

    def test_even_kernel_same(self):
        with pytest.raises(ModelError):
            infer_shapes((8, 8, 1), [Conv(4, 2, "same")])


class TestNetworkSpec:
    def test_invariants(self):
        spec = NetworkSpec.from_topology("8x8-4C3-10", timesteps=3, beta="0.15", classes=10, pop_per_class=2)
        assert spec.layers[-1].out_features == 20
        assert spec.beta.raw == 80530637
        assert spec.theta == fxp.ONE
        with pytest.raises(ModelError):
            NetworkSpec.from_topology("8x8-4C3-10", timesteps=3, beta="0.15", classes=3, pop_per_class=2)
        with pytest.raises(ModelError):
            NetworkSpec.from_topology("8x8-4C3-10", timesteps=3, beta="1.0", classes=10)
        with pytest.raises(ModelError):
            NetworkSpec.from_topology("8x8-4C3", timesteps=3, beta="0.5", classes=4)


def test_chunk_ranges():
    assert chunk_ranges(10, 3) == [(0, 4), (4, 8), (8, 10)]
    assert chunk_ranges(9, 3) == [(0, 3), (3, 6), (6, 9)]
    assert chunk_ranges(5, 1) == [(0, 5)]


def _small_model(tmp_path, zero=False):
    spec = NetworkSpec.from_topology("6x6x2-3C3-P2-2", timesteps=2, beta="0.15", classes=2, pop_per_class=2)
    rng = np.random.default_rng(5)
    weights = synth.random_weights(spec, rng)
    if zero:
        weights = [LayerWeights(np.zeros_like(w.w), np.zeros_like(w.bias)) for w in weights]
    hw = HardwareConfig((LayerHW(3, 2), LayerHW(2, 1)))
    path = save_manifest(tmp_path / "m.json", spec, weights, hw)
    return path, spec, weights, hw


class TestManifest:
    def test_zero_weights(self, tmp_path):
        path, spec, _, _ = _small_model(tmp_path, zero=True)
        spec2, weights, hw = load_manifest(path)
        assert spec2 == spec
        assert all(not w.w.any() and not w.bias.any() for w in weights)
        assert hw.layers == (LayerHW(3, 2), LayerHW(2, 1))

    def test_short_blob(self, tmp_path):
        path, *_ = _small_model(tmp_path)
        blob = tmp_path / "layer0_conv_w.bin"
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(ModelError, match="layer 0 \\(conv\\) weights.*shape mismatch"):
            load_manifest(path)

    def test_missing_blob(self, tmp_path):
        path, *_ = _small_model(tmp_path)
        (tmp_path / "layer1_dense_b.bin").unlink()
        with pytest.raises(ManifestIOError, match="layer1_dense_b.bin"):
            load_manifest(path)

    def test_roundtrip_bytes(self, tmp_path):
        path, *_ = _small_model(tmp_path)
        spec, weights, hw = load_manifest(path)
        out = tmp_path / "copy"
        save_manifest(out / "m.json", spec, weights, hw)
        for name in ("layer0_conv_w.bin", "layer0_conv_b.bin", "layer1_dense_w.bin", "layer1_dense_b.bin"):
            assert (out / name).read_bytes() == (tmp_path / name).read_bytes()
        assert (out / "m.json").read_text() == path.read_text()

    def test_padding_and_knobs(self, tmp_path):
        path, *_ = _small_model(tmp_path)
        doc = json.loads(path.read_text())
        assert doc["beta"] == "0.15"
        doc["padding"] = ["valid"]
        doc["penc_width"] = 16
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelError):  # weights were written for 'same'-shaped dense input
            load_manifest(path)

    def test_nc_count_cap(self, tmp_path):
        path, *_ = _small_model(tmp_path)
        doc = json.loads(path.read_text())
        doc["layers"][0]["nc_count"] = 4
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelError, match="nc_count"):
            load_manifest(path)
