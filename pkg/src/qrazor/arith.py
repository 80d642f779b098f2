"""Decompression-free integer matmul over SDR-compressed operands.

Compressed magnitudes are multiplied directly with narrow integer
multiplies; the two group flags are applied as a single barrel shift of
the group-pair partial sum.  Shifting once after the in-group accumulation
is algebraically identical to shifting every product, because all products
of a group pair share the same shift amount.  Sign handling is an XOR of
the operand sign bits applied to unsigned magnitude products, never a
two's-complement multiply of encoded words.

Accumulation runs in 64-bit signed integers and is exact, so any reduction
order gives identical results.  The stage-1 float scales are applied once
per output cell at the very end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import LengthMismatch, PlanInvalid, ShiftOverflow
from .quantizer import PerChannel, PerTensor, ScaleSet
from .sdr import CompressedGroup, CompressedTensor, SdrConfig

ACC_BITS = 62


def _signed_values(signs: np.ndarray, mags: np.ndarray) -> np.ndarray:
    return np.where(signs == 1, -mags.astype(np.int64), mags.astype(np.int64))


def _check_shift_budget(max_abs_dot: int, shift: int) -> None:
    if max_abs_dot.bit_length() + shift > ACC_BITS:
        raise ShiftOverflow(
            f"group-pair shift {shift} on a dot product of up to "
            f"{max_abs_dot.bit_length()} bits exceeds the {ACC_BITS}-bit budget"
        )


def mac_group(a: CompressedGroup, b: CompressedGroup) -> int:
    """Multiply-accumulate two compressed groups without decompressing.

    Returns ``(sum_i sgn_i * mag_a_i * mag_b_i) << (flag_a + flag_b)`` where
    ``sgn_i`` is minus one exactly when the operand signs differ.
    """
    if a.mags.size != b.mags.size:
        raise LengthMismatch(f"group lengths differ: {a.mags.size} != {b.mags.size}")
    shift = a.flag + b.flag
    max_dot = int(a.mags.max(initial=0)) * int(b.mags.max(initial=0)) * a.mags.size
    _check_shift_budget(max_dot, shift)
    va = _signed_values(a.signs, a.mags)
    vb = _signed_values(b.signs, b.mags)
    return int(va @ vb) << shift


def mac_group_decompress_oracle(a: CompressedGroup, b: CompressedGroup) -> int:
    """Correctness oracle: decompress both operands, then accumulate
    full-width products."""
    if a.mags.size != b.mags.size:
        raise LengthMismatch(f"group lengths differ: {a.mags.size} != {b.mags.size}")
    max_dot = (
        (int(a.mags.max(initial=0)) << a.flag)
        * (int(b.mags.max(initial=0)) << b.flag)
        * a.mags.size
    )
    _check_shift_budget(max_dot, 0)
    va = _signed_values(a.signs, a.mags) << np.int64(a.flag)
    vb = _signed_values(b.signs, b.mags) << np.int64(b.flag)
    return int(va @ vb)


def max_pair_shift(lhs: SdrConfig, rhs: SdrConfig) -> int:
    """Widest barrel shift any group pair of these two configs can demand."""
    return lhs.max_flag + rhs.max_flag


@dataclass
class MatmulPlan:
    """Operands and scales for ``lhs @ rhs.T``.

    ``lhs`` is (M, K) and ``rhs`` is (N, K); both are grouped along their
    last (shared inner) axis with the same group size, so group boundaries
    align by construction.  Per-channel scales, when used, must sit on axis
    0 of their operand -- rows of lhs, output channels of rhs -- anything
    else cannot be factored out of the inner product.
    """

    lhs: CompressedTensor
    rhs: CompressedTensor
    lhs_scales: ScaleSet
    rhs_scales: ScaleSet

    def __post_init__(self):
        lhs, rhs = self.lhs, self.rhs
        if len(lhs.shape) != 2 or len(rhs.shape) != 2:
            raise PlanInvalid("matmul operands must be 2-D")
        if lhs.shape[1] != rhs.shape[1]:
            raise PlanInvalid(
                f"inner dimensions differ: {lhs.shape[1]} != {rhs.shape[1]}"
            )
        if lhs.config.group_size != rhs.config.group_size:
            raise PlanInvalid("operands must share one group size")
        for name, ct, ss in (("lhs", lhs, self.lhs_scales),
                             ("rhs", rhs, self.rhs_scales)):
            if ss.base_bits != ct.config.base_bits:
                raise PlanInvalid(f"{name} scales disagree with its base precision")
            if isinstance(ss.granularity, PerChannel):
                if ss.granularity.axis != 0:
                    raise PlanInvalid(
                        f"{name} per-channel scales must sit on axis 0"
                    )
                if ss.scales.size != ct.shape[0]:
                    raise PlanInvalid(
                        f"{name} has {ss.scales.size} scales for {ct.shape[0]} channels"
                    )

    def output_scale_grid(self) -> np.ndarray:
        """Per-output-cell scale: lhs row scale times rhs channel scale."""
        m, n = self.lhs.shape[0], self.rhs.shape[0]

        def axis_scales(ss: ScaleSet, size: int) -> np.ndarray:
            vals = ss.scales.astype(np.float64)
            if isinstance(ss.granularity, PerTensor):
                return np.full(size, vals[0])
            return vals

        return np.outer(axis_scales(self.lhs_scales, m),
                        axis_scales(self.rhs_scales, n))


def matmul_integer(lhs: CompressedTensor, rhs: CompressedTensor) -> np.ndarray:
    """The integer accumulator grid of ``lhs @ rhs.T``, before any scaling."""
    if len(lhs.shape) != 2 or len(rhs.shape) != 2:
        raise PlanInvalid("matmul operands must be 2-D")
    if lhs.shape[1] != rhs.shape[1]:
        raise PlanInvalid(f"inner dimensions differ: {lhs.shape[1]} != {rhs.shape[1]}")
    if lhs.config.group_size != rhs.config.group_size:
        raise PlanInvalid("operands must share one group size")
    k = lhs.shape[1]
    max_dot = (
        ((1 << lhs.config.salient_bits) - 1)
        * ((1 << rhs.config.salient_bits) - 1)
        * max(k, 1)
    )
    max_shift = int(lhs.flags.max(initial=0)) + int(rhs.flags.max(initial=0))
    _check_shift_budget(max_dot, max_shift)

    a_vals = _signed_values(lhs.signs, lhs.mags).reshape(lhs.shape)
    b_vals = _signed_values(rhs.signs, rhs.mags).reshape(rhs.shape)
    return kernels.matmul_blocks(
        np.ascontiguousarray(a_vals), lhs.flags,
        np.ascontiguousarray(b_vals), rhs.flags,
        lhs.config.group_size,
    )


def matmul_compressed(plan: MatmulPlan) -> np.ndarray:
    """Full decompression-free matmul: integer grid times stage-1 scales."""
    acc = matmul_integer(plan.lhs, plan.rhs)
    return acc.astype(np.float64) * plan.output_scale_grid()
