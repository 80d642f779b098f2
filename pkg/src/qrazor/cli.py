"""Command-line surface.

Every subcommand reads and writes the binary containers from
:mod:`qrazor.packfmt` and emits one JSON object per report on stdout.
Data-level failures print a single machine-readable JSON line on stderr
and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import functools
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis, arith, packfmt, sdr
from .errors import ConfigViolation, InvariantViolation, QrazorError
from .quantizer import (
    PerChannel,
    PerTensor,
    Role,
    ScaleSet,
    calibrate_absmax,
    quantize_base,
)

_ROLE_NAMES = [r.name.lower() for r in Role]


def _data_errors(fn):
    """Map library and I/O failures to exit 1 with a JSON error line."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (QrazorError, OSError, json.JSONDecodeError) as exc:
            line = {"error": type(exc).__name__, "detail": str(exc)}
            click.echo(json.dumps(line), err=True)
            sys.exit(1)

    return wrapper


def _emit(report: dict) -> None:
    def default(value):
        if isinstance(value, float):
            return value
        raise TypeError(f"cannot serialize {type(value)}")

    def clean(value):
        if isinstance(value, float) and math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        return value

    click.echo(json.dumps(clean(report), default=default))


def _granularity_meta(ss: ScaleSet) -> tuple[str, int | None]:
    if isinstance(ss.granularity, PerTensor):
        return "per_tensor", None
    return "per_channel", ss.granularity.axis


def _save_scales_meta(path: str, ss: ScaleSet) -> None:
    gran, axis = _granularity_meta(ss)
    meta = {
        "role": ss.role.name.lower(),
        "granularity": gran,
        "channel_axis": axis,
        "base_bits": ss.base_bits,
        "scales": [float(s) for s in ss.scales],
    }
    Path(path).write_text(json.dumps(meta, indent=2) + "\n")


def _load_scales_meta(path: str) -> ScaleSet:
    meta = json.loads(Path(path).read_text())
    if meta["granularity"] == "per_tensor":
        gran = PerTensor()
    else:
        gran = PerChannel(int(meta["channel_axis"]))
    return ScaleSet(
        Role[meta["role"].upper()], gran, int(meta["base_bits"]),
        np.asarray(meta["scales"], dtype=np.float32),
    )


def _sdr_config(base_bits: int, target_bits: int, group_size: int,
                flag_bits: int | None) -> sdr.SdrConfig:
    return sdr.SdrConfig(base_bits, target_bits, group_size, flag_bits or 0)


@click.group()
def main():
    """Two-stage integer quantization toolkit.

    Stage 1 quantizes floats to 8/16-bit sign-magnitude integers with
    static absmax scales; stage 2 compresses them per group by razoring
    off redundant bits.  Compressed tensors multiply without being
    decompressed.
    """


@main.command()
@click.option("--role", type=click.Choice(_ROLE_NAMES), required=True)
@click.option("--granularity", type=click.Choice(["per-tensor", "per-channel"]),
              default="per-tensor", show_default=True)
@click.option("--channel-axis", type=int, default=0, show_default=True,
              help="Channel axis for per-channel granularity.")
@click.option("--base-bits", type=click.Choice(["8", "16"]), required=True)
@click.option("--fp16-scales", is_flag=True,
              help="Round scales through float16 before storing.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.argument("tensors", nargs=-1, required=True, type=click.Path())
@_data_errors
def calibrate(role, granularity, channel_axis, base_bits, fp16_scales,
              out_path, tensors):
    """Derive absmax scales from FTN1 calibration tensors."""
    samples = [packfmt.read_tensor_container(Path(p).read_bytes()) for p in tensors]
    gran = PerTensor() if granularity == "per-tensor" else PerChannel(channel_axis)
    ss = calibrate_absmax(samples, Role[role.upper()], gran, int(base_bits),
                          fp16_scales=fp16_scales)
    _save_scales_meta(out_path, ss)
    _emit({"report": "calibration", "out": out_path,
           "n_scales": int(ss.scales.size), "base_bits": ss.base_bits})


@main.command()
@click.option("--scales", "scales_path", required=True, type=click.Path())
@click.argument("src", type=click.Path())
@click.argument("dst", type=click.Path())
@_data_errors
def quantize(scales_path, src, dst):
    """Quantize an FTN1 float tensor to a BTN1 base-precision tensor."""
    ss = _load_scales_meta(scales_path)
    x = packfmt.read_tensor_container(Path(src).read_bytes())
    bt = quantize_base(x, ss)
    Path(dst).write_bytes(packfmt.write_base_tensor(bt, ss))
    _emit({"report": "quantize", "out": dst, "shape": list(bt.shape),
           "base_bits": bt.base_bits})


@main.command()
@click.option("--base-bits", type=int, default=None,
              help="Expected base precision; must match the input file.")
@click.option("--target-bits", type=int, required=True)
@click.option("--group-size", type=int, required=True)
@click.option("--flag-bits", type=int, default=None,
              help="Override the derived flag width.")
@click.argument("src", type=click.Path())
@click.argument("dst", type=click.Path())
@_data_errors
def compress(base_bits, target_bits, group_size, flag_bits, src, dst):
    """Compress a BTN1 base tensor into a packed QRZ1 file."""
    bt, ss = packfmt.read_base_tensor(Path(src).read_bytes())
    if base_bits is not None and base_bits != bt.base_bits:
        raise ConfigViolation(
            f"--base-bits {base_bits} but input tensor is {bt.base_bits}-bit"
        )
    cfg = _sdr_config(bt.base_bits, target_bits, group_size, flag_bits)
    ct = sdr.compress_tensor(bt, cfg)
    Path(dst).write_bytes(packfmt.encode_qrz(ct, ss))
    _emit({
        "report": "compress", "out": dst, "shape": list(ct.shape),
        "groups": int(ct.n_groups),
        "effective_bits": float(packfmt.effective_bits(
            cfg.target_bits, cfg.flag_bits, cfg.group_size)),
    })


@main.command()
@click.argument("src", type=click.Path())
@click.argument("dst", type=click.Path())
@_data_errors
def decompress(src, dst):
    """Expand a QRZ1 file back to a BTN1 base tensor."""
    ct, ss, _role = packfmt.decode_qrz(Path(src).read_bytes())
    bt = sdr.decompress_tensor(ct)
    Path(dst).write_bytes(packfmt.write_base_tensor(bt, ss))
    _emit({"report": "decompress", "out": dst, "shape": list(bt.shape),
           "base_bits": bt.base_bits})


@main.command()
@click.option("--out", "out_path", required=True, type=click.Path())
@click.argument("lhs", type=click.Path())
@click.argument("rhs", type=click.Path())
@_data_errors
def matmul(out_path, lhs, rhs):
    """Decompression-free matmul of two QRZ1 files.

    LHS is (M, K) and RHS is (N, K), both grouped along K; the FTN1 output
    is the (M, N) product LHS @ RHS^T scaled back to floats.
    """
    lhs_ct, lhs_ss, _ = packfmt.decode_qrz(Path(lhs).read_bytes())
    rhs_ct, rhs_ss, _ = packfmt.decode_qrz(Path(rhs).read_bytes())
    plan = arith.MatmulPlan(lhs_ct, rhs_ct, lhs_ss, rhs_ss)
    result = arith.matmul_compressed(plan)
    Path(out_path).write_bytes(packfmt.write_tensor_container(result))
    _emit({"report": "matmul", "out": out_path, "shape": list(result.shape)})


@main.command()
@click.option("--hist", "mode", flag_value="hist", help="Razoring-point histogram.")
@click.option("--zeros", "mode", flag_value="zeros",
              help="Zeroed-element fractions before/after compression.")
@click.option("--errors", "mode", flag_value="errors",
              help="Full round-trip error metrics.")
@click.option("--dmq", "mode", flag_value="dmq",
              help="Per-group dynamic absmax baseline metrics.")
@click.option("--group-size", type=int, default=None)
@click.option("--target-bits", type=int, default=None)
@click.option("--flag-bits", type=int, default=None)
@click.option("--bits", type=int, default=None, help="Bit width for --dmq.")
@click.option("--scales", "scales_path", type=click.Path(), default=None,
              help="Scales metadata for --errors.")
@click.option("--above", type=int, default=None,
              help="Also report the group fraction above this bit order.")
@click.argument("src", type=click.Path())
@_data_errors
def stats(mode, group_size, target_bits, flag_bits, bits, scales_path, above, src):
    """Analysis reports over FTN1/BTN1/QRZ1 inputs (one JSON object)."""
    if mode is None:
        raise click.UsageError("choose one of --hist, --zeros, --errors, --dmq")
    data = Path(src).read_bytes()

    if mode == "hist":
        if data[:4] == packfmt.QRZ_MAGIC:
            ct, _ss, role = packfmt.decode_qrz(data)
            bt = sdr.decompress_tensor(ct)
            g = ct.config.group_size
        else:
            bt, ss = packfmt.read_base_tensor(data)
            role = ss.role
            if group_size is None:
                raise click.UsageError("--group-size is required for BTN1 input")
            g = group_size
        hist = analysis.leading_one_histogram(bt, g, role=role)
        report = {
            "report": "leading_one_histogram",
            "role": role.name.lower(),
            "group_size": g,
            "base_bits": hist.base_bits,
            "total_groups": hist.total_groups,
            "zero_groups": hist.zero_groups,
            "counts": {str(i + 1): int(c) for i, c in enumerate(hist.counts)},
        }
        if above is not None:
            report["above_order"] = above
            report["frac_above"] = hist.frac_above(above)
        _emit(report)
        return

    if mode == "zeros":
        if target_bits is None or group_size is None:
            raise click.UsageError("--zeros needs --target-bits and --group-size")
        bt, _ss = packfmt.read_base_tensor(data)
        cfg = _sdr_config(bt.base_bits, target_bits, group_size, flag_bits)
        recon = sdr.decompress_tensor(sdr.compress_tensor(bt, cfg))
        n = max(bt.mags.size, 1)
        _emit({
            "report": "zero_fractions",
            "zero_frac_before": float((bt.mags == 0).sum()) / n,
            "zero_frac_after": float((recon.mags == 0).sum()) / n,
        })
        return

    if mode == "errors":
        if target_bits is None or group_size is None or scales_path is None:
            raise click.UsageError(
                "--errors needs --scales, --target-bits and --group-size")
        ss = _load_scales_meta(scales_path)
        x = packfmt.read_tensor_container(data)
        cfg = _sdr_config(ss.base_bits, target_bits, group_size, flag_bits)
        _emit({"report": "compression_errors",
               **analysis.compression_error_report(x, ss, cfg).__dict__})
        return

    if bits is None or group_size is None:
        raise click.UsageError("--dmq needs --bits and --group-size")
    x = packfmt.read_tensor_container(data)
    _emit({"report": "dmq_baseline",
           **analysis.dmq_baseline(x, group_size, bits).__dict__})


@main.command()
@click.option("--m", type=int, required=True)
@click.option("--n", type=int, required=True)
@click.option("--h", type=int, required=True)
@click.option("--g", type=int, required=True)
@_data_errors
def cost(m, n, h, g):
    """Rotation-vs-razoring operation counts for an (m, n) tensor."""
    report = analysis.ops_cost(m, n, h, g)
    _emit({"report": "ops_cost", **report.__dict__})


@main.command()
@click.argument("src", type=click.Path())
@_data_errors
def check(src):
    """Validate a QRZ1 file: decode, verify invariants, re-encode byte-exact."""
    data = Path(src).read_bytes()
    ct, ss, role = packfmt.decode_qrz(data)
    reencoded = packfmt.encode_qrz(ct, ss, role)
    if reencoded != data:
        raise InvariantViolation("re-encoded stream differs from input")
    _emit({
        "report": "check", "ok": True, "shape": list(ct.shape),
        "groups": int(ct.n_groups), "elements": int(ct.mags.size),
        "role": role.name.lower(),
        "effective_bits": float(packfmt.effective_bits(
            ct.config.target_bits, ct.config.flag_bits, ct.config.group_size)),
    })


if __name__ == "__main__":
    main()
