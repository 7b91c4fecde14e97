"""Signed Q3.29 fixed-point arithmetic, bit-exact with the accelerator datapath.

A value is stored as a 32-bit two's-complement ``raw`` integer and read as
``raw * 2**-29``.  Addition wraps modulo 2**32 like a plain hardware adder,
multiplication truncates toward minus infinity (arithmetic shift right).

Scalar helpers operate on :class:`Fx32`; the ``*_raw`` helpers operate on
numpy integer arrays and are what the engine and the oracle share.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

FRAC_BITS = 29
WORD_BITS = 32
SCALE = 1 << FRAC_BITS

RAW_MIN = -(1 << (WORD_BITS - 1))
RAW_MAX = (1 << (WORD_BITS - 1)) - 1
ONE_RAW = 1 << FRAC_BITS  # 0x20000000

_MOD = 1 << WORD_BITS
_HALF = 1 << (WORD_BITS - 1)


class FxpRangeError(ValueError):
    """A real value does not fit the Q3.29 datapath."""


def wrap32(value: int) -> int:
    """Reduce an integer to the signed 32-bit range (two's complement)."""
    return ((value + _HALF) % _MOD) - _HALF


@dataclass(frozen=True, order=True)
class Fx32:
    raw: int

    def __post_init__(self):
        if not RAW_MIN <= self.raw <= RAW_MAX:
            raise FxpRangeError(f"raw {self.raw} outside int32")

    @classmethod
    def from_bits(cls, bits: int) -> "Fx32":
        """Build from an unsigned 32-bit pattern, e.g. ``0xFFFFFFFF``."""
        return cls(wrap32(bits))

    @property
    def bits(self) -> int:
        return self.raw & (_MOD - 1)

    def to_fraction(self) -> Fraction:
        return Fraction(self.raw, SCALE)

    def __float__(self) -> float:
        return self.raw / SCALE

    def __repr__(self) -> str:
        return f"Fx32({float(self)!r}, raw=0x{self.bits:08X})"


ZERO = Fx32(0)
ONE = Fx32(ONE_RAW)
NEG_ONE = Fx32(-ONE_RAW)


class WrapCounter:
    """Counts adder overflow events; one instance per engine run."""

    def __init__(self):
        self.count = 0

    def __repr__(self) -> str:
        return f"WrapCounter({self.count})"


def encode_raw(x) -> int:
    """Round-to-nearest-even of ``x * 2**29`` computed in exact rationals.

    ``x`` may be a float, int, Fraction or decimal string such as ``"0.15"``.
    """
    q = Fraction(x) if not isinstance(x, Fraction) else x
    if not (-4 <= q < 4):
        raise FxpRangeError(f"{x!r} outside Q3.29 range [-4, 4)")
    raw = round(q * SCALE)  # Fraction.__round__ is half-to-even
    if raw > RAW_MAX:
        raise FxpRangeError(f"{x!r} rounds past the largest Q3.29 value")
    return raw


def encode(x) -> Fx32:
    return Fx32(encode_raw(x))


def decode(v: Fx32) -> float:
    return float(v)


def add(a: Fx32, b: Fx32, counter: WrapCounter | None = None) -> Fx32:
    s = a.raw + b.raw
    r = wrap32(s)
    if counter is not None and r != s:
        counter.count += 1
    return Fx32(r)


def mul(a: Fx32, b: Fx32) -> Fx32:
    # Python's >> on negative ints is already floor (arithmetic) shift.
    return Fx32(wrap32((a.raw * b.raw) >> FRAC_BITS))


def spike_check(u: Fx32) -> bool:
    """Three-bit threshold test: sign bit clear and bit 30 or bit 29 set."""
    bits = u.bits
    if bits >> 31:
        return False
    return bool((bits >> 29) & 0b11)


def soft_reset(u: Fx32, counter: WrapCounter | None = None) -> Fx32:
    return add(u, NEG_ONE, counter)


# ---------------------------------------------------------------------------
# array forms (int64 containers holding int32-range raws)


def wrap32_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    return ((x + _HALF) & (_MOD - 1)) - _HALF


def wrap_buckets(x: np.ndarray) -> np.ndarray:
    """Index of the 2**32-wide window an unwrapped sum falls in (0 = no wrap)."""
    return (np.asarray(x, dtype=np.int64) + _HALF) >> WORD_BITS


def add_raw(a, b, counter: WrapCounter | None = None) -> np.ndarray:
    s = np.asarray(a, dtype=np.int64) + np.asarray(b, dtype=np.int64)
    if counter is not None:
        counter.count += int(np.count_nonzero(wrap_buckets(s)))
    return wrap32_array(s)


def mul_raw(a, b) -> np.ndarray:
    # int32 x int32 fits in int64; numpy >> on signed ints is arithmetic
    p = np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64)
    return wrap32_array(p >> FRAC_BITS)


def spike_check_raw(u) -> np.ndarray:
    bits = np.asarray(u, dtype=np.int64) & (_MOD - 1)
    sign = (bits >> 31) & 1
    top = (bits >> 29) & 0b11
    return (sign == 0) & (top != 0)


def soft_reset_raw(u, counter: WrapCounter | None = None) -> np.ndarray:
    return add_raw(u, -ONE_RAW, counter)


def encode_array(values) -> np.ndarray:
    """Vectorised :func:`encode` for float arrays (exact for float64 inputs)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size and (np.any(v < -4.0) or np.any(v >= 4.0) or not np.all(np.isfinite(v))):
        raise FxpRangeError("array contains values outside Q3.29 range [-4, 4)")
    # scaling by a power of two is exact in float64; rint is half-to-even
    raw = np.rint(v * SCALE).astype(np.int64)
    if raw.size and raw.max() > RAW_MAX:
        raise FxpRangeError("array value rounds past the largest Q3.29 value")
    return raw

