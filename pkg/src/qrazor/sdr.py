"""Stage 2: significant-data razoring (SDR) group compression.

Each group of ``group_size`` consecutive base-precision integers shares one
razoring point: the bit position of the leading one of the bitwise OR of
all magnitudes in the group.  The ``salient_bits`` magnitude bits below
that point are kept, everything lower is truncated with round-to-nearest,
and a per-group flag records how many low bits were dropped.  Rounding is
suppressed (floored) for elements whose retained bits are all ones, so a
carry can never spill past the salient field and the sign can never flip.

Decompression is a plain left shift by the flag.  Both directions are
exact bit manipulation; no per-group scale factors exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigViolation, CorruptFlag, ShapeMismatch
from .quantizer import BaseTensor


@dataclass(frozen=True)
class SdrConfig:
    """Compression geometry.

    ``target_bits`` is the total width of a compressed element including its
    sign bit, so ``salient_bits = target_bits - 1`` magnitude bits survive.
    ``flag_bits`` defaults to the smallest width that can hold the largest
    possible flag; it can be overridden upward (e.g. a uniform 4 bits) for
    storage-accounting experiments.  ``base_bits`` is 8 or 16 in the
    standard pairings but any width from 3 to 16 is accepted so that small
    toy configurations remain constructible for exhaustive checking.
    """

    base_bits: int
    target_bits: int
    group_size: int
    flag_bits: int = field(default=0)

    def __post_init__(self):
        if not 3 <= self.base_bits <= 16:
            raise ConfigViolation("base_bits must be in [3, 16]")
        if self.target_bits < 2:
            raise ConfigViolation("target_bits must be at least 2 (sign + 1)")
        if self.target_bits >= self.base_bits:
            raise ConfigViolation(
                "target_bits must be below base_bits; nothing to razor otherwise"
            )
        if self.group_size < 1:
            raise ConfigViolation("group_size must be positive")
        if self.flag_bits == 0:
            object.__setattr__(
                self, "flag_bits",
                max(1, math.ceil(math.log2(self.base_bits - self.target_bits + 1))),
            )
        if self.flag_bits < 1:
            raise ConfigViolation("flag_bits must be positive")
        if self.max_flag >= (1 << self.flag_bits):
            raise ConfigViolation(
                f"flag value {self.max_flag} does not fit in {self.flag_bits} bits"
            )

    @property
    def salient_bits(self) -> int:
        return self.target_bits - 1

    @property
    def max_flag(self) -> int:
        """Largest truncated-LSB count: all bits below the top magnitude bit."""
        return (self.base_bits - 1) - self.salient_bits


@dataclass
class CompressedGroup:
    """One group: a shared flag plus sign/salient-magnitude pairs."""

    flag: int
    signs: np.ndarray
    mags: np.ndarray

    def __post_init__(self):
        self.signs = np.ascontiguousarray(self.signs, dtype=np.uint8)
        self.mags = np.ascontiguousarray(self.mags, dtype=np.uint16)
        if self.signs.shape != self.mags.shape or self.signs.ndim != 1:
            raise ShapeMismatch("group signs/mags must be matching 1-D arrays")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, CompressedGroup)
            and self.flag == other.flag
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.mags, other.mags)
        )


@dataclass
class CompressedTensor:
    """SDR-compressed tensor: per-group flags plus per-element sign/mag.

    Groups run along the last axis in row-major order; only the final group
    of each row may be shorter than ``config.group_size``.  ``flags`` has
    shape (rows, groups_per_row).
    """

    shape: tuple[int, ...]
    config: SdrConfig
    flags: np.ndarray
    signs: np.ndarray
    mags: np.ndarray

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        if not self.shape:
            raise ShapeMismatch("compressed tensors must have at least one axis")
        self.flags = np.ascontiguousarray(self.flags, dtype=np.uint8)
        self.signs = np.ascontiguousarray(self.signs, dtype=np.uint8)
        self.mags = np.ascontiguousarray(self.mags, dtype=np.uint16)
        if self.signs.shape != self.shape or self.mags.shape != self.shape:
            raise ShapeMismatch("signs/mags arrays must match the tensor shape")
        rows, length = self.rows, self.row_length
        gpr = -(-length // self.config.group_size) if length else 0
        if self.flags.shape != (rows, gpr):
            raise ShapeMismatch(
                f"flags shape {self.flags.shape} != expected {(rows, gpr)}"
            )
        if self.flags.size and int(self.flags.max()) > self.config.max_flag:
            raise CorruptFlag(
                f"flag exceeds maximum {self.config.max_flag} for this config"
            )
        if self.mags.size:
            if int(self.mags.max()) >= (1 << self.config.salient_bits):
                raise ShapeMismatch("compressed magnitude exceeds the salient width")
            if np.any((self.mags == 0) & (self.signs != 0)):
                raise ShapeMismatch("zero magnitude must carry canonical sign 0")
            if np.any(self.signs > 1):
                raise ShapeMismatch("signs must be 0 or 1")

    @property
    def rows(self) -> int:
        return int(np.prod(self.shape[:-1], dtype=np.int64)) if len(self.shape) > 1 else 1

    @property
    def row_length(self) -> int:
        return self.shape[-1]

    @property
    def n_groups(self) -> int:
        return self.flags.size

    def group(self, index: int) -> CompressedGroup:
        """Materialize one group in row-major group order."""
        gpr = self.flags.shape[1]
        r, gi = divmod(index, gpr)
        g = self.config.group_size
        lo, hi = gi * g, min((gi + 1) * g, self.row_length)
        signs = self.signs.reshape(self.rows, self.row_length)[r, lo:hi]
        mags = self.mags.reshape(self.rows, self.row_length)[r, lo:hi]
        return CompressedGroup(int(self.flags[r, gi]), signs.copy(), mags.copy())


def detect_razoring_point(mags: Sequence[int] | np.ndarray) -> int | None:
    """Leading-one bit index (0 = LSB) of the OR of all magnitudes.

    Returns None for an all-zero group.
    """
    mags = np.asarray(mags)
    if mags.size == 0:
        raise ShapeMismatch("razoring point of an empty group is undefined")
    or_val = int(np.bitwise_or.reduce(mags.astype(np.uint16).ravel()))
    if or_val == 0:
        return None
    return or_val.bit_length() - 1


def _as_group_arrays(signs, mags) -> tuple[np.ndarray, np.ndarray]:
    signs = np.ascontiguousarray(signs, dtype=np.uint8)
    mags = np.ascontiguousarray(mags, dtype=np.uint16)
    if signs.shape != mags.shape or signs.ndim != 1 or signs.size == 0:
        raise ShapeMismatch("a group is two matching non-empty 1-D arrays")
    if np.any(signs > 1):
        raise ShapeMismatch("signs must be 0 or 1")
    return signs, mags


def compress_group(signs, mags, cfg: SdrConfig) -> CompressedGroup:
    """Compress one group of sign-magnitude integers."""
    signs, mags = _as_group_arrays(signs, mags)
    if signs.size > cfg.group_size:
        raise ConfigViolation(f"group has {signs.size} elements, limit {cfg.group_size}")
    if int(mags.max()) >= (1 << (cfg.base_bits - 1)):
        raise ConfigViolation("magnitude exceeds the base-precision range")
    out_signs, out_mags, flags = kernels.compress_blocks(
        signs.reshape(1, -1), mags.reshape(1, -1), cfg.group_size, cfg.salient_bits
    )
    return CompressedGroup(int(flags[0, 0]), out_signs[0], out_mags[0])


def compress_group_reference(signs, mags, cfg: SdrConfig) -> CompressedGroup:
    """Naive per-element oracle for compress_group.

    Finds the maximum magnitude, derives its leading-one position by
    repeated halving, then truncates and rounds element by element with
    plain Python integers.  Must match compress_group bitwise.
    """
    signs, mags = _as_group_arrays(signs, mags)
    if signs.size > cfg.group_size:
        raise ConfigViolation(f"group has {signs.size} elements, limit {cfg.group_size}")
    s = cfg.salient_bits
    biggest = max(int(m) for m in mags)
    if biggest >= (1 << (cfg.base_bits - 1)):
        raise ConfigViolation("magnitude exceeds the base-precision range")

    position = -1
    while biggest:
        biggest //= 2
        position += 1

    dropped = position + 1 - s
    if dropped < 0:
        dropped = 0

    out_signs, out_mags = [], []
    for sign, mag in zip(signs, mags):
        mag = int(mag)
        kept = mag >> dropped
        if dropped > 0 and kept != (1 << s) - 1 and (mag >> (dropped - 1)) & 1 == 1:
            kept += 1
        out_mags.append(kept)
        out_signs.append(int(sign) if kept else 0)
    return CompressedGroup(
        dropped,
        np.array(out_signs, dtype=np.uint8),
        np.array(out_mags, dtype=np.uint16),
    )


def decompress_group(cg: CompressedGroup, cfg: SdrConfig) -> tuple[np.ndarray, np.ndarray]:
    """Restore one group to base precision: magnitudes shift left by the flag."""
    if not 0 <= cg.flag <= cfg.max_flag:
        raise CorruptFlag(f"flag {cg.flag} outside [0, {cfg.max_flag}]")
    mags = (cg.mags.astype(np.uint16) << np.uint16(cg.flag)).astype(np.uint16)
    return cg.signs.copy(), mags


def compress_tensor(bt: BaseTensor, cfg: SdrConfig) -> CompressedTensor:
    """Compress a base tensor group by group along its last axis."""
    if bt.base_bits != cfg.base_bits:
        raise ConfigViolation(
            f"tensor base_bits {bt.base_bits} != config base_bits {cfg.base_bits}"
        )
    if not bt.shape:
        raise ShapeMismatch("compression needs at least one axis to group along")
    length = bt.shape[-1]
    rows = int(np.prod(bt.shape[:-1], dtype=np.int64)) if len(bt.shape) > 1 else 1
    signs2d = bt.signs.reshape(rows, length)
    mags2d = bt.mags.reshape(rows, length)
    out_signs, out_mags, flags = kernels.compress_blocks(
        signs2d, mags2d, cfg.group_size, cfg.salient_bits
    )
    return CompressedTensor(
        bt.shape, cfg, flags,
        out_signs.reshape(bt.shape), out_mags.reshape(bt.shape),
    )


def decompress_tensor(ct: CompressedTensor) -> BaseTensor:
    """Reassemble a compressed tensor at base precision, group layout order."""
    rows, length = ct.rows, ct.row_length
    signs2d = ct.signs.reshape(rows, length)
    mags2d = ct.mags.reshape(rows, length)
    out_signs, out_mags = kernels.decompress_blocks(
        signs2d, mags2d, ct.flags, ct.config.group_size
    )
    return BaseTensor(
        ct.shape, ct.config.base_bits,
        out_signs.reshape(ct.shape), out_mags.reshape(ct.shape),
    )
