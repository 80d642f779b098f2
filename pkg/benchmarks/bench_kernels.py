"""Benchmark the numba kernels against the pure-numpy fallback.

Runs the group compression, decompression and compressed-matmul kernels on
identical inputs through both backends and prints a timing table.  Results
are verified equal before timing, so the speedup column is apples to
apples.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from qrazor import kernels


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def make_blocks(rng, rows, length, base_bits):
    mags = rng.integers(0, 1 << (base_bits - 1), size=(rows, length)).astype(np.uint16)
    signs = (rng.integers(0, 2, size=(rows, length)).astype(np.uint8)) * (mags > 0)
    return signs, mags


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    try:
        numba_impl = kernels._build_numba_kernels()
    except ImportError:
        raise SystemExit("numba is not importable; nothing to compare")
    numpy_impl = kernels._NUMPY_KERNELS

    rng = np.random.default_rng(0)
    rows = []

    for shape, g, s in [((1024, 4096), 16, 3), ((4096, 4096), 32, 3)]:
        signs, mags = make_blocks(rng, shape[0], shape[1], 16)
        compressed = numpy_impl["compress_blocks"](signs, mags, g, s)
        check = numba_impl["compress_blocks"](signs, mags, g, s)
        assert all(np.array_equal(a, b) for a, b in zip(compressed, check))

        label = f"compress {shape[0]}x{shape[1]} g={g}"
        t_np = best_of(lambda: numpy_impl["compress_blocks"](signs, mags, g, s),
                       args.repeats)
        t_nb = best_of(lambda: numba_impl["compress_blocks"](signs, mags, g, s),
                       args.repeats)
        rows.append((label, t_np, t_nb))

        out_signs, out_mags, flags = compressed
        label = f"decompress {shape[0]}x{shape[1]} g={g}"
        t_np = best_of(
            lambda: numpy_impl["decompress_blocks"](out_signs, out_mags, flags, g),
            args.repeats)
        t_nb = best_of(
            lambda: numba_impl["decompress_blocks"](out_signs, out_mags, flags, g),
            args.repeats)
        rows.append((label, t_np, t_nb))

    for m, k, n, g in [(128, 1024, 128, 16), (256, 2048, 256, 32)]:
        a_vals = rng.integers(-7, 8, size=(m, k)).astype(np.int64)
        b_vals = rng.integers(-7, 8, size=(n, k)).astype(np.int64)
        gpr = -(-k // g)
        a_flags = rng.integers(0, 13, size=(m, gpr)).astype(np.uint8)
        b_flags = rng.integers(0, 5, size=(n, gpr)).astype(np.uint8)
        assert np.array_equal(
            numpy_impl["matmul_blocks"](a_vals, a_flags, b_vals, b_flags, g),
            numba_impl["matmul_blocks"](a_vals, a_flags, b_vals, b_flags, g))

        label = f"matmul {m}x{k}.{k}x{n} g={g}"
        t_np = best_of(
            lambda: numpy_impl["matmul_blocks"](a_vals, a_flags, b_vals, b_flags, g),
            args.repeats)
        t_nb = best_of(
            lambda: numba_impl["matmul_blocks"](a_vals, a_flags, b_vals, b_flags, g),
            args.repeats)
        rows.append((label, t_np, t_nb))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for label, t_np, t_nb in rows:
        print(f"{label:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  "
              f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
