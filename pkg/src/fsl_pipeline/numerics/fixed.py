"""Signed fixed-point format (Q8.8 by default) with saturating semantics.

All rounding is round-half-to-even. Products of two raw values carry twice
the fractional bits and are reduced to the storage format exactly once, at
write-back, by :func:`round_shift` followed by :func:`saturate`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..errors import QuantizationError

ArrayLike = Union[float, int, np.ndarray]


@dataclass(frozen=True)
class FixedFormat:
    total_bits: int = 16
    integer_bits: int = 8

    def __post_init__(self):
        if not 0 < self.integer_bits <= self.total_bits <= 16:
            raise QuantizationError(f"unsupported format Q{self.integer_bits}.{self.fractional_bits}")

    @property
    def fractional_bits(self) -> int:
        return self.total_bits - self.integer_bits

    @property
    def scale(self) -> int:
        return 1 << self.fractional_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def min_value(self) -> float:
        return self.raw_min / self.scale

    @property
    def max_value(self) -> float:
        return self.raw_max / self.scale

    @property
    def name(self) -> str:
        return f"q{self.integer_bits}.{self.fractional_bits}"


Q8_8 = FixedFormat(16, 8)


def saturate(acc: ArrayLike, fmt: FixedFormat = Q8_8) -> np.ndarray:
    return np.clip(np.asarray(acc, dtype=np.int64), fmt.raw_min, fmt.raw_max).astype(np.int16)


def quantize(x: ArrayLike, fmt: FixedFormat = Q8_8):
    """Real value(s) -> raw integer(s): round-half-even of ``x * 2^frac``, saturated."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise QuantizationError("cannot quantize a non-finite value")
    scaled = np.rint(arr * fmt.scale)
    raw = np.clip(scaled, fmt.raw_min, fmt.raw_max).astype(np.int16)
    return int(raw) if raw.ndim == 0 else raw


def dequantize(raw: ArrayLike, fmt: FixedFormat = Q8_8):
    out = np.asarray(raw, dtype=np.float64) / fmt.scale
    return float(out) if out.ndim == 0 else out


def round_shift(acc: ArrayLike, shift: int) -> np.ndarray:
    """``acc / 2^shift`` rounded half-to-even, on exact integers."""
    acc = np.asarray(acc, dtype=np.int64)
    if shift == 0:
        return acc
    q = acc >> shift
    rem = acc - (q << shift)
    half = 1 << (shift - 1)
    up = (rem > half) | ((rem == half) & ((q & 1) == 1))
    return q + up


def div_round_even(num: ArrayLike, den: int) -> np.ndarray:
    """Integer division rounded half-to-even (``den`` > 0)."""
    num = np.asarray(num, dtype=np.int64)
    q, rem = np.divmod(num, den)
    twice = 2 * rem
    up = (twice > den) | ((twice == den) & ((q & 1) == 1))
    return q + up


def requantize_accumulator(acc: ArrayLike, fmt: FixedFormat = Q8_8) -> np.ndarray:
    """Wide product-sum (2*frac fractional bits) -> storage raw values."""
    return saturate(round_shift(acc, fmt.fractional_bits), fmt)


def align_bias(bias_raw: ArrayLike, fmt: FixedFormat = Q8_8) -> np.ndarray:
    """Lift storage-format bias to accumulator scale."""
    return np.asarray(bias_raw, dtype=np.int64) << fmt.fractional_bits


@dataclass(frozen=True)
class QTensor:
    """Raw int16 tensor in one shared fixed-point format."""

    raw: np.ndarray
    fmt: FixedFormat = Q8_8

    def __post_init__(self):
        raw = np.asarray(self.raw)
        if raw.dtype != np.int16:
            if raw.size and (raw.min() < self.fmt.raw_min or raw.max() > self.fmt.raw_max):
                raise QuantizationError("raw values outside the format's range")
            raw = raw.astype(np.int16)
        object.__setattr__(self, "raw", raw)

    @classmethod
    def from_float(cls, x: ArrayLike, fmt: FixedFormat = Q8_8) -> "QTensor":
        return cls(np.asarray(quantize(np.asarray(x), fmt), dtype=np.int16).reshape(np.shape(x)), fmt)

    @property
    def shape(self):
        return self.raw.shape

    def to_float(self) -> np.ndarray:
        return np.asarray(dequantize(self.raw, self.fmt)).reshape(self.raw.shape)

    def __eq__(self, other):
        if not isinstance(other, QTensor):
            return NotImplemented
        return self.fmt == other.fmt and np.array_equal(self.raw, other.raw)

    __hash__ = None
