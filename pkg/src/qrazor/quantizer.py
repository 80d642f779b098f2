"""Stage 1: static absolute-max integer quantization.

Float tensors are mapped to sign-magnitude integers at a base precision of
8 or 16 bits.  The scale for each slot is ``absmax / (2**(bits-1) - 1)``,
so the integer range is symmetric: the two's-complement minimum is never
produced.  Weights use per-channel scales (output-channel axis by
convention); activations, queries, keys and values use a single per-tensor
scale.  Scales are static: they come from a calibration pass, and values
seen later that fall outside the calibrated range are clamped, not
rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Union

import numpy as np

from .errors import (
    AllZeroSlot,
    EmptyCalibration,
    ShapeMismatch,
    UnsupportedValue,
)

BASE_BITS = (8, 16)


class Role(IntEnum):
    """Tensor role; the numeric values are the wire encoding."""

    WEIGHT = 0
    ACTIVATION = 1
    QUERY = 2
    KEY = 3
    VALUE = 4


@dataclass(frozen=True)
class PerTensor:
    """One scale for the whole tensor."""


@dataclass(frozen=True)
class PerChannel:
    """One scale per index along ``axis``."""

    axis: int


Granularity = Union[PerTensor, PerChannel]


def _check_finite(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise UnsupportedValue("tensor contains NaN or infinite values")
    return x


def int_max(base_bits: int) -> int:
    return (1 << (base_bits - 1)) - 1


@dataclass(frozen=True)
class ScaleSet:
    """Static absmax scale factors for one tensor role.

    ``scales`` is float32 (the container precision) and is always positive;
    length 1 for per-tensor granularity, length of the channel axis for
    per-channel.
    """

    role: Role
    granularity: Granularity
    base_bits: int
    scales: np.ndarray

    def __post_init__(self):
        if self.base_bits not in BASE_BITS:
            raise ShapeMismatch(f"base_bits must be one of {BASE_BITS}")
        scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        if scales.ndim != 1 or scales.size == 0:
            raise ShapeMismatch("scales must be a non-empty 1-D array")
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise AllZeroSlot("every scale must be positive and finite")
        if isinstance(self.granularity, PerTensor) and scales.size != 1:
            raise ShapeMismatch("per-tensor scaling takes exactly one scale")
        object.__setattr__(self, "scales", scales)

    def slot_scales(self, shape: tuple[int, ...]) -> np.ndarray:
        """Scales broadcastable against a tensor of ``shape``, as float64."""
        scales = self.scales.astype(np.float64)
        if isinstance(self.granularity, PerTensor):
            return scales.reshape(())
        axis = self.granularity.axis
        if not 0 <= axis < len(shape):
            raise ShapeMismatch(f"channel axis {axis} out of range for {shape}")
        if scales.size != shape[axis]:
            raise ShapeMismatch(
                f"{scales.size} scales for axis of size {shape[axis]}"
            )
        view = [1] * len(shape)
        view[axis] = scales.size
        return scales.reshape(view)


@dataclass
class BaseTensor:
    """Sign-magnitude integers at base precision.

    ``signs`` and ``mags`` share the tensor shape; magnitude fits in
    ``base_bits - 1`` bits and a zero magnitude always carries sign 0.
    """

    shape: tuple[int, ...]
    base_bits: int
    signs: np.ndarray
    mags: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        self.signs = np.ascontiguousarray(self.signs, dtype=np.uint8)
        self.mags = np.ascontiguousarray(self.mags, dtype=np.uint16)
        if self.base_bits not in BASE_BITS:
            raise ShapeMismatch(f"base_bits must be one of {BASE_BITS}")
        if self.signs.shape != self.shape or self.mags.shape != self.shape:
            raise ShapeMismatch("signs/mags arrays must match the tensor shape")
        if self.mags.size:
            if int(self.mags.max(initial=0)) > int_max(self.base_bits):
                raise ShapeMismatch("magnitude exceeds the base-precision range")
            if np.any((self.mags == 0) & (self.signs != 0)):
                raise ShapeMismatch("zero magnitude must carry canonical sign 0")
            if np.any(self.signs > 1):
                raise ShapeMismatch("signs must be 0 or 1")

    @classmethod
    def from_signed(cls, values: np.ndarray, base_bits: int) -> "BaseTensor":
        values = np.asarray(values, dtype=np.int64)
        if values.size and int(np.abs(values).max()) > int_max(base_bits):
            raise ShapeMismatch("value exceeds the base-precision range")
        mags = np.abs(values).astype(np.uint16)
        signs = (values < 0).astype(np.uint8)
        return cls(values.shape, base_bits, signs, mags)

    def to_signed(self) -> np.ndarray:
        return np.where(self.signs == 1, -self.mags.astype(np.int32),
                        self.mags.astype(np.int32))


def calibrate_absmax(
    samples: Iterable[np.ndarray],
    role: Role,
    granularity: Granularity,
    base_bits: int,
    fp16_scales: bool = False,
) -> ScaleSet:
    """Derive absmax scales from calibration samples.

    Per-channel calibration requires every sample to agree on the channel
    axis size; the absmax per slot is the strict maximum over all samples.
    ``fp16_scales`` additionally rounds each scale through float16 before it
    is stored at the float32 container precision.
    """
    samples = [_check_finite(s) for s in samples]
    if not samples:
        raise EmptyCalibration("at least one calibration sample is required")

    if isinstance(granularity, PerTensor):
        absmax = np.zeros(1, dtype=np.float64)
        for s in samples:
            if s.size:
                absmax[0] = max(absmax[0], float(np.abs(s).max()))
    else:
        axis = granularity.axis
        sizes = set()
        for s in samples:
            if not 0 <= axis < s.ndim:
                raise ShapeMismatch(f"channel axis {axis} out of range for {s.shape}")
            sizes.add(s.shape[axis])
        if len(sizes) != 1:
            raise ShapeMismatch(f"samples disagree on channel-axis size: {sorted(sizes)}")
        absmax = np.zeros(sizes.pop(), dtype=np.float64)
        for s in samples:
            moved = np.moveaxis(np.abs(s), axis, 0).reshape(absmax.size, -1)
            if moved.shape[1]:
                absmax = np.maximum(absmax, moved.max(axis=1))

    if np.any(absmax == 0):
        bad = int(np.argmax(absmax == 0))
        raise AllZeroSlot(
            f"scale slot {bad} saw only zeros; supply data or an explicit scale"
        )

    scales = absmax / int_max(base_bits)
    if fp16_scales:
        scales = scales.astype(np.float16).astype(np.float64)
    return ScaleSet(role, granularity, base_bits, scales.astype(np.float32))


def _round_half_away(t: np.ndarray) -> np.ndarray:
    """Round-half-away-from-zero magnitudes of |t|, exact on the float input."""
    whole = np.floor(t)
    return whole + (t - whole >= 0.5)


def quantize_base(x: np.ndarray, scale_set: ScaleSet) -> BaseTensor:
    """Quantize a float tensor to sign-magnitude base-precision integers.

    Values are divided by their slot scale, rounded half away from zero and
    clamped to the symmetric range, which absorbs activations that exceed
    the calibration absmax.
    """
    x = _check_finite(x)
    slot = scale_set.slot_scales(x.shape)
    t = np.abs(x) / slot
    mags = np.minimum(_round_half_away(t), int_max(scale_set.base_bits))
    mags = mags.astype(np.uint16)
    signs = ((x < 0) & (mags > 0)).astype(np.uint8)
    return BaseTensor(x.shape, scale_set.base_bits, signs, mags)


def dequantize_base(q: BaseTensor, scale_set: ScaleSet) -> np.ndarray:
    """Map base-precision integers back to floats (float64 output)."""
    if q.base_bits != scale_set.base_bits:
        raise ShapeMismatch(
            f"tensor base_bits {q.base_bits} != scale base_bits {scale_set.base_bits}"
        )
    slot = scale_set.slot_scales(q.shape)
    return q.to_signed().astype(np.float64) * slot
