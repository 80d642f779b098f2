"""Hot loops shared by the compression and matmul stages.

Two interchangeable backends produce byte-identical results:

* ``numba`` -- @njit loops, the default when numba imports cleanly.
* ``numpy`` -- vectorized fallback, no compilation step.

Selection is controlled by the ``QRAZOR_BACKEND`` environment variable
(``auto``, ``numba`` or ``numpy``), read once at import time.  All kernels
work on 2-D views: tensors are flattened to (rows, row_length) with groups
of ``g`` consecutive elements along the last axis; the final group of a row
may be short.

Magnitudes are uint16, signs and flags uint8, accumulators int64.  All
arithmetic is integer and exact, so results do not depend on evaluation
order or backend.
"""

from __future__ import annotations

import os

import numpy as np


def _group_count(length: int, g: int) -> int:
    return -(-length // g)


# -- numpy backend ---------------------------------------------------------

def _razor_points_numpy(mags: np.ndarray, g: int) -> np.ndarray:
    """Per-group leading-one bit index of the OR-reduction; -1 for all-zero."""
    rows, length = mags.shape
    gpr = _group_count(length, g)
    padded = np.zeros((rows, gpr * g), dtype=mags.dtype)
    padded[:, :length] = mags
    or_vals = np.bitwise_or.reduce(padded.reshape(rows, gpr, g), axis=2)
    # frexp is exact for integers < 2**53: value = m * 2**e with m in [0.5, 1)
    # puts the leading one at bit e-1; zero yields e == 0 hence -1.
    return (np.frexp(or_vals.astype(np.float64))[1] - 1).astype(np.int64)


def _compress_blocks_numpy(signs: np.ndarray, mags: np.ndarray, g: int, s: int):
    rows, length = mags.shape
    points = _razor_points_numpy(mags, g)
    flags = np.maximum(points + 1 - s, 0).astype(np.uint8)
    if length == 0:
        return signs.copy(), mags.copy(), flags
    per_elem = np.repeat(flags, g, axis=1)[:, :length]
    q = (mags >> per_elem).astype(np.uint16)
    full = np.uint16((1 << s) - 1)
    dropped_msb = (mags >> np.maximum(per_elem.astype(np.int32) - 1, 0)) & 1
    round_up = (per_elem > 0) & (q != full) & (dropped_msb == 1)
    out_mags = q + round_up.astype(np.uint16)
    out_signs = np.where(out_mags == 0, 0, signs).astype(np.uint8)
    return out_signs, out_mags, flags


def _decompress_blocks_numpy(signs: np.ndarray, mags: np.ndarray,
                             flags: np.ndarray, g: int):
    rows, length = mags.shape
    if length == 0:
        return signs.copy(), mags.copy()
    per_elem = np.repeat(flags, g, axis=1)[:, :length]
    out_mags = (mags.astype(np.uint16) << per_elem).astype(np.uint16)
    return signs.copy(), out_mags


def _matmul_blocks_numpy(a_vals: np.ndarray, a_flags: np.ndarray,
                         b_vals: np.ndarray, b_flags: np.ndarray,
                         g: int) -> np.ndarray:
    m, k = a_vals.shape
    n = b_vals.shape[0]
    out = np.zeros((m, n), dtype=np.int64)
    for gi in range(a_flags.shape[1]):
        seg = slice(gi * g, min((gi + 1) * g, k))
        prod = a_vals[:, seg] @ b_vals[:, seg].T
        shift = a_flags[:, gi].astype(np.int64)[:, None] + b_flags[:, gi]
        out += prod << shift
    return out


# -- numba backend ---------------------------------------------------------

def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def razor_points(mags, g):
        rows, length = mags.shape
        gpr = -(-length // g)
        points = np.empty((rows, gpr), dtype=np.int64)
        for r in range(rows):
            for gi in range(gpr):
                or_val = np.int64(0)
                for k in range(gi * g, min((gi + 1) * g, length)):
                    or_val |= mags[r, k]
                p = np.int64(-1)
                while or_val:
                    or_val >>= 1
                    p += 1
                points[r, gi] = p
        return points

    @njit(cache=True)
    def compress_blocks(signs, mags, g, s):
        rows, length = mags.shape
        gpr = -(-length // g)
        out_signs = np.zeros_like(signs)
        out_mags = np.zeros_like(mags)
        flags = np.zeros((rows, gpr), dtype=np.uint8)
        full = (1 << s) - 1
        for r in range(rows):
            for gi in range(gpr):
                lo = gi * g
                hi = min(lo + g, length)
                or_val = np.int64(0)
                for k in range(lo, hi):
                    or_val |= mags[r, k]
                p = np.int64(-1)
                while or_val:
                    or_val >>= 1
                    p += 1
                bl = p + 1 - s
                if bl < 0:
                    bl = 0
                flags[r, gi] = bl
                for k in range(lo, hi):
                    mag = np.int64(mags[r, k])
                    q = mag >> bl
                    if bl > 0 and q != full and (mag >> (bl - 1)) & 1:
                        q += 1
                    out_mags[r, k] = q
                    out_signs[r, k] = signs[r, k] if q != 0 else 0
        return out_signs, out_mags, flags

    @njit(cache=True)
    def decompress_blocks(signs, mags, flags, g):
        rows, length = mags.shape
        out_signs = signs.copy()
        out_mags = np.empty_like(mags)
        for r in range(rows):
            for gi in range(flags.shape[1]):
                f = flags[r, gi]
                for k in range(gi * g, min((gi + 1) * g, length)):
                    out_mags[r, k] = mags[r, k] << f
        return out_signs, out_mags

    @njit(cache=True)
    def matmul_blocks(a_vals, a_flags, b_vals, b_flags, g):
        m, k = a_vals.shape
        n = b_vals.shape[0]
        gpr = a_flags.shape[1]
        out = np.empty((m, n), dtype=np.int64)
        for i in range(m):
            for j in range(n):
                total = np.int64(0)
                for gi in range(gpr):
                    acc = np.int64(0)
                    for kk in range(gi * g, min((gi + 1) * g, k)):
                        acc += a_vals[i, kk] * b_vals[j, kk]
                    total += acc << (a_flags[i, gi] + b_flags[j, gi])
                out[i, j] = total
        return out

    return {
        "razor_points": razor_points,
        "compress_blocks": compress_blocks,
        "decompress_blocks": decompress_blocks,
        "matmul_blocks": matmul_blocks,
    }


_NUMPY_KERNELS = {
    "razor_points": _razor_points_numpy,
    "compress_blocks": _compress_blocks_numpy,
    "decompress_blocks": _decompress_blocks_numpy,
    "matmul_blocks": _matmul_blocks_numpy,
}


def _select_backend() -> tuple[str, dict]:
    choice = os.environ.get("QRAZOR_BACKEND", "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"QRAZOR_BACKEND must be auto, numba or numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy", _NUMPY_KERNELS
    try:
        return "numba", _build_numba_kernels()
    except ImportError:
        if choice == "numba":
            raise
        return "numpy", _NUMPY_KERNELS


BACKEND, _ACTIVE = _select_backend()

razor_points = _ACTIVE["razor_points"]
compress_blocks = _ACTIVE["compress_blocks"]
decompress_blocks = _ACTIVE["decompress_blocks"]
matmul_blocks = _ACTIVE["matmul_blocks"]
