"""Spike-train production and compression.

* rate coding of an image into a ``(T, C, H, W)`` binary tensor,
* priority-encoder (PENC) compression of one binary plane into its list of
  set-bit addresses,
* flat index to ``(row, col)`` translation,
* population decoding of the classifier's spike counts.

Rate coding draws uniforms from Philox4x64-10 (numpy's counter-based bit
generator).  Each ``(t, c)`` plane gets its own stream with key ``seed`` and
counter ``(t, c, 0, 0)``; the n-th uniform of that stream belongs to flat
pixel index n, so planes can be generated in any order or in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

PRNG_NAME = "Philox4x64-10"


class EncodeError(ValueError):
    pass


@dataclass
class SpikeTensor:
    """Binary activations shaped ``(T, C, H, W)``, row-major within a plane."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 4:
            raise ValueError(f"SpikeTensor needs 4 dims (T, C, H, W), got {self.bits.shape}")

    @classmethod
    def zeros(cls, t, c, h, w) -> "SpikeTensor":
        return cls(np.zeros((t, c, h, w), dtype=bool))

    @property
    def dims(self) -> tuple:
        return self.bits.shape

    def plane(self, t: int, c: int) -> np.ndarray:
        return self.bits[t, c].reshape(-1)

    def plane_counts(self) -> np.ndarray:
        """Spike count S of every ``(t, c)`` plane."""
        return self.bits.sum(axis=(2, 3), dtype=np.int64)

    def total(self) -> int:
        return int(self.bits.sum(dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, SpikeTensor):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def to_text(self) -> str:
        """Header ``T C H W`` then one hex line per plane; bit i = flat index i."""
        t, c, h, w = self.dims
        digits = max(1, -(-(h * w) // 4))
        lines = [f"{t} {c} {h} {w}"]
        for ti in range(t):
            for ci in range(c):
                lines.append(format(plane_to_int(self.plane(ti, ci)), f"0{digits}x"))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SpikeTensor":
        lines = text.split()
        t, c, h, w = (int(v) for v in lines[:4])
        planes = lines[4:]
        if len(planes) != t * c:
            raise ValueError(f"expected {t * c} planes, found {len(planes)}")
        out = np.zeros((t, c, h * w), dtype=bool)
        for k, hexline in enumerate(planes):
            value = int(hexline, 16)
            if value >> (h * w):
                raise ValueError(f"plane {k} has bits beyond index {h * w - 1}")
            out[k // c, k % c] = int_to_plane(value, h * w)
        return cls(out.reshape(t, c, h, w))

    def dump(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "SpikeTensor":
        return cls.from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# rate coding


def plane_generator(seed: int, t: int, c: int) -> np.random.Generator:
    key = seed & ((1 << 64) - 1)
    return np.random.Generator(np.random.Philox(key=key, counter=[t, c, 0, 0]))


def rate_encode(image: np.ndarray, timesteps: int, seed: int = 0) -> SpikeTensor:
    """Bernoulli spike per pixel and timestep with probability = intensity.

    ``image`` is ``(C, H, W)`` with values in [0, 1].
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise EncodeError(f"image must be (C, H, W), got shape {img.shape}")
    if not np.all((img >= 0.0) & (img <= 1.0)):
        raise EncodeError("pixel values must lie in [0, 1]")
    c, h, w = img.shape
    out = np.empty((timesteps, c, h, w), dtype=bool)
    for t in range(timesteps):
        for ci in range(c):
            u = plane_generator(seed, t, ci).random(h * w)
            out[t, ci] = (u < img[ci].reshape(-1)).reshape(h, w)
    return SpikeTensor(out)


# ---------------------------------------------------------------------------
# priority encoder


def plane_to_int(plane) -> int:
    """Pack a binary plane into an int whose bit i is flat index i."""
    bits = np.asarray(plane, dtype=bool).reshape(-1)
    return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")


def int_to_plane(value: int, length: int) -> np.ndarray:
    nbytes = max(1, -(-length // 8))
    raw = np.frombuffer(value.to_bytes(nbytes, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:length].astype(bool)


def penc_compress(plane) -> list:
    """Addresses of the set bits, lowest first.

    Mirrors the encoder loop: take the first set bit, emit its address,
    clear that bit, repeat until the word is zero.  ``plane`` is either an
    int bit-vector or a binary array.
    """
    word = plane if isinstance(plane, int) else plane_to_int(plane)
    events = []
    while word:
        lowest = word & -word
        events.append(lowest.bit_length() - 1)
        word ^= lowest  # bit reset
    return events


def scatter_back(events, length: int) -> np.ndarray:
    plane = np.zeros(length, dtype=bool)
    plane[np.asarray(events, dtype=np.int64)] = True
    return plane


def index_to_coords(index: int, width: int) -> tuple:
    return divmod(index, width)


# ---------------------------------------------------------------------------
# population decoding


class Decision(NamedTuple):
    label: int
    no_spike: bool
    class_totals: tuple


def pop_decode(spike_counts, classes: int, pop_per_class: int) -> Decision:
    """Argmax over per-class sums of contiguous neuron blocks; ties go low."""
    counts = np.asarray(spike_counts, dtype=np.int64)
    if counts.shape != (classes * pop_per_class,):
        raise ValueError(f"expected {classes * pop_per_class} counts, got {counts.shape}")
    totals = counts.reshape(classes, pop_per_class).sum(axis=1)
    label = int(np.argmax(totals))  # first maximum
    return Decision(label, bool(totals.max() == 0), tuple(int(v) for v in totals))
