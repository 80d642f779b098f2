"""Analysis tooling: razoring-point histograms, error metrics, a per-group
dynamic-max baseline, and the rotation-vs-razoring operation-count model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigViolation
from .quantizer import (
    BaseTensor,
    Role,
    ScaleSet,
    dequantize_base,
    int_max,
    quantize_base,
    _check_finite,
    _round_half_away,
)
from .sdr import CompressedTensor, SdrConfig, compress_tensor, decompress_tensor


@dataclass
class LeadingOneHistogram:
    """Distribution of per-group razoring points.

    ``counts[i]`` is the number of groups whose leading-one sits at bit
    order ``i + 1`` (1-based from the LSB); all-zero groups land in
    ``zero_groups``.
    """

    counts: np.ndarray
    zero_groups: int
    group_size: int
    base_bits: int
    role: Role | None = None

    @property
    def total_groups(self) -> int:
        return int(self.counts.sum()) + self.zero_groups

    def frac_above(self, bit_order: int) -> float:
        """Share of groups whose razoring point exceeds ``bit_order``."""
        total = self.total_groups
        if total == 0:
            return 0.0
        return float(self.counts[bit_order:].sum()) / total


def leading_one_histogram(bt: BaseTensor, group_size: int,
                          role: Role | None = None) -> LeadingOneHistogram:
    """Histogram of razoring points for groups along the last axis."""
    if group_size < 1:
        raise ConfigViolation("group_size must be positive")
    length = bt.shape[-1] if bt.shape else 0
    rows = bt.mags.size // length if length else 0
    points = kernels.razor_points(bt.mags.reshape(rows, length), group_size)
    points = np.asarray(points).ravel()
    orders = points[points >= 0] + 1
    counts = np.bincount(orders, minlength=bt.base_bits)[1:bt.base_bits]
    return LeadingOneHistogram(
        counts=counts.astype(np.int64),
        zero_groups=int((points < 0).sum()),
        group_size=group_size,
        base_bits=bt.base_bits,
        role=role,
    )


@dataclass
class ErrorReport:
    """Round-trip error metrics in the float domain.

    ``sqnr_db`` is 10*log10(signal power / noise power) and comes out
    infinite when the reconstruction is exact.  The zero fractions count
    exactly-zero integers before and after compression.
    """

    mse: float
    max_abs_err: float
    sqnr_db: float
    zero_frac_before: float
    zero_frac_after: float


def _error_metrics(x: np.ndarray, recon: np.ndarray,
                   zero_before: float, zero_after: float) -> ErrorReport:
    err = recon - x
    noise = float(np.sum(err * err))
    signal = float(np.sum(x * x))
    if noise == 0.0:
        sqnr = math.inf
    elif signal == 0.0:
        sqnr = -math.inf
    else:
        sqnr = 10.0 * math.log10(signal / noise)
    n = max(x.size, 1)
    return ErrorReport(
        mse=noise / n,
        max_abs_err=float(np.abs(err).max(initial=0.0)),
        sqnr_db=sqnr,
        zero_frac_before=zero_before,
        zero_frac_after=zero_after,
    )


def compression_error_report(x: np.ndarray, scales: ScaleSet,
                             cfg: SdrConfig) -> ErrorReport:
    """Metrics for the full quantize -> compress -> decompress -> dequantize
    round trip."""
    x = _check_finite(x)
    bt = quantize_base(x, scales)
    recon_bt = decompress_tensor(compress_tensor(bt, cfg))
    recon = dequantize_base(recon_bt, scales)
    n = max(x.size, 1)
    return _error_metrics(
        x, recon,
        zero_before=float((bt.mags == 0).sum()) / n,
        zero_after=float((recon_bt.mags == 0).sum()) / n,
    )


def dmq_baseline(x: np.ndarray, group_size: int, bits: int) -> ErrorReport:
    """Per-group dynamic absmax quantization, the costlier comparison point.

    Each group of ``group_size`` elements along the last axis gets its own
    real-valued scale ``absmax / (2**(bits-1) - 1)``; elements quantize
    with round-half-away-from-zero.  Zero fractions count exact zeros in
    the input and zero codes in the output.
    """
    if bits < 2:
        raise ConfigViolation("bits must be at least 2")
    if group_size < 1:
        raise ConfigViolation("group_size must be positive")
    x = _check_finite(x)
    length = x.shape[-1] if x.ndim else 0
    if x.size == 0 or length == 0:
        return _error_metrics(x, x.copy(), 0.0, 0.0)

    rows = x.size // length
    gpr = -(-length // group_size)
    padded = np.zeros((rows, gpr * group_size), dtype=np.float64)
    padded[:, :length] = np.abs(x.reshape(rows, length))
    absmax = padded.reshape(rows, gpr, group_size).max(axis=2)

    qmax = int_max(bits)
    scale = np.repeat(absmax / qmax, group_size, axis=1)[:, :length]
    safe = np.where(scale == 0, 1.0, scale)
    codes = np.minimum(_round_half_away(np.abs(x.reshape(rows, length)) / safe), qmax)
    recon = (np.sign(x.reshape(rows, length)) * codes * scale).reshape(x.shape)
    return _error_metrics(
        x, recon,
        zero_before=float((x == 0).sum()) / x.size,
        zero_after=float((codes == 0).sum()) / x.size,
    )


@dataclass
class CostReport:
    """Operation counts for a rotation-based pipeline versus razoring.

    The four headline counts follow the closed forms M*N, H*M*N, 2*M*N/G
    and M*N/G.  ``exact`` records whether G divides M*N; when it does not,
    the per-group counts use ceil(N/G) groups per row instead.
    ``razor_per_element_iops`` (2*M*N: one OR touch and one truncate/round
    per element) is an extension beyond the headline accounting.
    """

    hadamard_single_flops: int
    hadamard_heads_flops: int
    sdr_compression_iops: int
    barrel_shifter_iops: int
    exact: bool
    razor_per_element_iops: int


def ops_cost(m: int, n: int, h: int, g: int) -> CostReport:
    """Closed-form operation counts for an (m, n) tensor with h heads and
    razoring group size g."""
    if min(m, n, h, g) < 1:
        raise ConfigViolation("all cost-model parameters must be positive")
    exact = (m * n) % g == 0
    groups = (m * n) // g if exact else m * (-(-n // g))
    return CostReport(
        hadamard_single_flops=m * n,
        hadamard_heads_flops=h * m * n,
        sdr_compression_iops=2 * groups,
        barrel_shifter_iops=groups,
        exact=exact,
        razor_per_element_iops=2 * m * n,
    )
