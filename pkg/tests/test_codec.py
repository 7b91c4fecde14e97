from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikeaccel import codec
from spikeaccel.codec import SpikeTensor


class TestRateEncode:
    def test_zero_image(self):
        for seed in (0, 7, 2**63):
            s = codec.rate_encode(np.zeros((2, 5, 4)), 6, seed)
            assert s.dims == (6, 2, 5, 4)
            assert s.total() == 0

    def test_ones_image(self):
        s = codec.rate_encode(np.ones((1, 3, 3)), 4, 11)
        assert s.bits.all()

    def test_rate_half(self):
        # P(X outside [450, 550]) for Binomial(1000, 1/2), summed exactly
        tail = sum(comb(1000, k) for k in range(1001) if k < 450 or k > 550) / 2**1000
        assert tail < 2e-3
        s = codec.rate_encode(np.full((1, 1, 1), 0.5), 1000, 42)
        assert 0.45 <= s.total() / 1000 <= 0.55

    def test_deterministic(self):
        img = np.random.default_rng(0).random((3, 6, 5))
        a = codec.rate_encode(img, 4, 123)
        b = codec.rate_encode(img, 4, 123)
        c = codec.rate_encode(img, 4, 124)
        assert a == b
        assert a != c

    def test_plane_streams_independent_of_shape(self):
        # a plane only depends on (seed, t, c) and the pixel values in it
        rng = np.random.default_rng(1)
        img = rng.random((3, 4, 4))
        full = codec.rate_encode(img, 3, 9)
        sub = codec.rate_encode(img[:2], 2, 9)
        assert np.array_equal(full.bits[:2, :2], sub.bits)

    def test_matches_philox_directly(self):
        img = np.random.default_rng(8).random((2, 3, 4))
        s = codec.rate_encode(img, 3, 77)
        for t in range(3):
            for c in range(2):
                gen = np.random.Generator(np.random.Philox(key=77, counter=[t, c, 0, 0]))
                expect = gen.random(12) < img[c].reshape(-1)
                assert np.array_equal(s.plane(t, c), expect)

    @pytest.mark.parametrize("bad", [1.5, -0.1, np.nan])
    def test_out_of_range(self, bad):
        img = np.zeros((1, 2, 2))
        img[0, 1, 1] = bad
        with pytest.raises(codec.EncodeError):
            codec.rate_encode(img, 1, 0)


class TestPenc:
    def test_empty(self):
        assert codec.penc_compress(0b0000) == []
        assert codec.penc_compress(np.zeros(4, dtype=bool)) == []

    def test_sparse(self):
        plane = np.zeros(8, dtype=bool)
        plane[[0, 2, 5]] = True
        linear_scan = [i for i, b in enumerate(plane) if b]
        assert codec.penc_compress(plane) == linear_scan == [0, 2, 5]

    def test_full(self):
        assert codec.penc_compress(np.ones(8, dtype=bool)) == list(range(8))

    @given(st.lists(st.booleans(), min_size=1, max_size=300))
    def test_roundtrip_random(self, bits):
        plane = np.array(bits, dtype=bool)
        ev = codec.penc_compress(plane)
        assert ev == sorted(set(ev))
        assert len(ev) == int(plane.sum())
        assert np.array_equal(codec.scatter_back(ev, plane.size), plane)

    def test_int_and_array_agree(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            plane = rng.random(77) < 0.3
            assert codec.penc_compress(plane) == codec.penc_compress(codec.plane_to_int(plane))


class TestCoords:
    @pytest.mark.parametrize("i,expected", [(0, (0, 0)), (29, (1, 1)), (783, (27, 27))])
    def test_examples(self, i, expected):
        assert codec.index_to_coords(i, 28) == expected


class TestPopDecode:
    def test_blocks(self):
        d = codec.pop_decode([0, 0, 3, 1], 2, 2)
        assert d.label == 1 and not d.no_spike
        assert d.class_totals == (0, 4)

    def test_all_zero(self):
        d = codec.pop_decode([0] * 6, 3, 2)
        assert d.label == 0 and d.no_spike

    def test_tie(self):
        assert codec.pop_decode([5, 5], 2, 1).label == 0

    @settings(max_examples=50)
    @given(st.data())
    def test_permutation_within_class(self, data):
        classes = data.draw(st.integers(1, 5))
        pop = data.draw(st.integers(1, 5))
        counts = data.draw(st.lists(st.integers(0, 9), min_size=classes * pop, max_size=classes * pop))
        perm = list(counts)
        for c in range(classes):
            block = perm[c * pop:(c + 1) * pop]
            perm[c * pop:(c + 1) * pop] = data.draw(st.permutations(block))
        assert codec.pop_decode(counts, classes, pop) == codec.pop_decode(perm, classes, pop)


class TestSpikeTensorText:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        s = SpikeTensor(rng.random((3, 2, 5, 7)) < 0.4)
        text = s.to_text()
        assert text.splitlines()[0] == "3 2 5 7"
        assert len(text.splitlines()) == 1 + 6
        assert SpikeTensor.from_text(text) == s
        s.dump(tmp_path / "s.txt")
        assert SpikeTensor.load(tmp_path / "s.txt") == s

    def test_hex_bit_order(self):
        bits = np.zeros((1, 1, 2, 4), dtype=bool)
        bits[0, 0, 0, 0] = bits[0, 0, 1, 3] = True  # flat indices 0 and 7
        assert SpikeTensor(bits).to_text().splitlines()[1] == "81"

    def test_plane_counts(self):
        bits = np.zeros((2, 3, 2, 2), dtype=bool)
        bits[1, 2] = True
        counts = SpikeTensor(bits).plane_counts()
        assert counts[1, 2] == 4 and counts.sum() == 4
