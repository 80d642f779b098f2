"""Bit-exact binary containers.

Three little-endian formats:

* ``FTN1`` -- raw float32 tensor: magic, version u16, dtype u8 (0 = f32),
  ndim u8, dims u64 each, row-major payload.
* ``QRZ1`` -- packed compressed tensor: header (role, bit widths, group
  size, scale granularity, dims, f32 scales), then one section of group
  flags and one section of elements.  Both sections pack their fields
  MSB-first, ``flag_bits`` per flag and ``target_bits`` per element (sign
  bit first, then magnitude bits MSB-first), each section zero-padded to a
  byte boundary.  Flags live in their own section, not interleaved with
  elements, so the two streams can be decoded independently.
* ``BTN1`` -- sign-magnitude base tensor with its scales, the intermediate
  the CLI passes between ``quantize`` and ``compress``; values are stored
  as signed int16.

Canonical streams round-trip exactly in both directions: decode(encode(x))
equals x and encode(decode(b)) equals b.
"""

from __future__ import annotations

import math
import struct
from fractions import Fraction

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    ConfigViolation,
    FlagOutOfRange,
    InvariantViolation,
    TruncatedStream,
    UnsupportedDtype,
    UnsupportedValue,
)
from .quantizer import BaseTensor, PerChannel, PerTensor, Role, ScaleSet, int_max
from .sdr import CompressedTensor, SdrConfig

FTN_MAGIC = b"FTN1"
QRZ_MAGIC = b"QRZ1"
BTN_MAGIC = b"BTN1"
VERSION = 1

_DTYPE_F32 = 0


def effective_bits(target_bits: int, flag_bits: int, group_size: int) -> Fraction:
    """Average stored bits per element: target_bits + flag_bits / group_size."""
    if group_size < 1:
        raise ConfigViolation("group_size must be positive")
    return Fraction(target_bits * group_size + flag_bits, group_size)


# -- bit packing -----------------------------------------------------------

def _pack_fields(values: np.ndarray, width: int) -> bytes:
    """Pack unsigned fields MSB-first, zero-padded to a byte boundary."""
    if values.size == 0:
        return b""
    shifts = np.arange(width - 1, -1, -1, dtype=np.uint32)
    bits = ((values.astype(np.uint32)[:, None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def _unpack_fields(data: bytes, width: int, count: int, what: str) -> np.ndarray:
    """Inverse of _pack_fields; rejects short data and nonzero padding."""
    n_bits = width * count
    n_bytes = -(-n_bits // 8)
    if len(data) < n_bytes:
        raise TruncatedStream(f"{what} section needs {n_bytes} bytes, has {len(data)}")
    raw = np.unpackbits(np.frombuffer(data[:n_bytes], dtype=np.uint8))
    if np.any(raw[n_bits:]):
        raise InvariantViolation(f"{what} section has nonzero padding bits")
    if count == 0:
        return np.zeros(0, dtype=np.uint32)
    weights = (1 << np.arange(width - 1, -1, -1)).astype(np.int64)
    return (raw[:n_bits].reshape(count, width) @ weights).astype(np.uint32)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedStream(f"stream ended inside {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def finish(self):
        if self.pos != len(self.data):
            raise InvariantViolation(
                f"{len(self.data) - self.pos} trailing bytes after the payload"
            )


def _read_dims(r: _Reader, ndim: int) -> tuple[int, ...]:
    if ndim < 1:
        raise InvariantViolation("ndim must be at least 1")
    return r.unpack(f"<{ndim}Q", "dims")


def _check_header_shape(shape: tuple[int, ...]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not 1 <= len(shape) <= 255:
        raise InvariantViolation("ndim must be in [1, 255]")
    if any(d < 0 for d in shape):
        raise InvariantViolation("dimensions must be non-negative")
    return shape


# -- FTN1: float tensor container -------------------------------------------

def write_tensor_container(t: np.ndarray) -> bytes:
    """Serialize a float tensor as FTN1 (float32 payload)."""
    t = np.ascontiguousarray(t)
    shape = _check_header_shape(t.shape)
    payload = t.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise UnsupportedValue("tensor payload must be finite at float32")
    head = struct.pack("<4sHBB", FTN_MAGIC, VERSION, _DTYPE_F32, len(shape))
    dims = struct.pack(f"<{len(shape)}Q", *shape)
    return head + dims + payload.tobytes()


def read_tensor_container(data: bytes) -> np.ndarray:
    """Parse FTN1 bytes back into a float32 ndarray."""
    r = _Reader(data)
    magic, version, dtype, ndim = r.unpack("<4sHBB", "header")
    if magic != FTN_MAGIC:
        raise BadMagic(f"expected {FTN_MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if dtype != _DTYPE_F32:
        raise UnsupportedDtype(f"dtype code {dtype} not supported in v1")
    shape = _read_dims(r, ndim)
    count = int(np.prod(shape, dtype=np.int64))
    payload = r.take(4 * count, "payload")
    r.finish()
    values = np.frombuffer(payload, dtype="<f4").reshape(shape)
    if not np.all(np.isfinite(values)):
        raise UnsupportedValue("tensor payload contains non-finite values")
    return values.copy()


# -- shared scale-header helpers --------------------------------------------

def _granularity_bytes(ss: ScaleSet) -> tuple[int, int]:
    if isinstance(ss.granularity, PerTensor):
        return 0, 0
    return 1, ss.granularity.axis


def _scales_from_header(gran: int, axis: int, base_bits: int, role_byte: int,
                        shape: tuple[int, ...], raw: np.ndarray) -> ScaleSet:
    if role_byte not in Role._value2member_map_:
        raise InvariantViolation(f"role byte {role_byte} out of range")
    if gran not in (0, 1):
        raise InvariantViolation(f"granularity byte {gran} out of range")
    if gran == 0:
        granularity = PerTensor()
        expected = 1
    else:
        if axis >= len(shape):
            raise InvariantViolation(f"channel axis {axis} out of range for {shape}")
        granularity = PerChannel(axis)
        expected = shape[axis]
    if raw.size != expected:
        raise InvariantViolation(f"{raw.size} scales where {expected} expected")
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0):
        raise InvariantViolation("scales must be positive and finite")
    return ScaleSet(Role(role_byte), granularity, base_bits, raw)


def _check_scales_match(ss: ScaleSet, shape: tuple[int, ...]) -> None:
    if isinstance(ss.granularity, PerChannel):
        axis = ss.granularity.axis
        if not 0 <= axis < len(shape):
            raise InvariantViolation(f"channel axis {axis} out of range for {shape}")
        if ss.scales.size != shape[axis]:
            raise InvariantViolation(
                f"{ss.scales.size} scales for axis of size {shape[axis]}"
            )


# -- QRZ1: packed compressed tensor ------------------------------------------

def encode_qrz(ct: CompressedTensor, scales: ScaleSet, role: Role | None = None) -> bytes:
    """Serialize a compressed tensor plus its stage-1 scales as QRZ1."""
    cfg = ct.config
    if cfg.base_bits not in (8, 16):
        raise InvariantViolation("only 8- and 16-bit base precisions serialize")
    if scales.base_bits != cfg.base_bits:
        raise InvariantViolation("scale base_bits disagrees with the tensor config")
    shape = _check_header_shape(ct.shape)
    _check_scales_match(scales, shape)
    role = scales.role if role is None else role
    gran, axis = _granularity_bytes(scales)

    head = struct.pack(
        "<4sHBBBBIBBB",
        QRZ_MAGIC, VERSION, int(role),
        cfg.base_bits, cfg.target_bits, cfg.flag_bits,
        cfg.group_size, gran, axis, len(shape),
    )
    dims = struct.pack(f"<{len(shape)}Q", *shape)
    scale_blob = struct.pack("<I", scales.scales.size)
    scale_blob += scales.scales.astype("<f4").tobytes()

    flag_section = _pack_fields(ct.flags.ravel(), cfg.flag_bits)
    fields = (ct.signs.astype(np.uint32).ravel() << (cfg.target_bits - 1)) \
        | ct.mags.astype(np.uint32).ravel()
    elem_section = _pack_fields(fields, cfg.target_bits)
    return head + dims + scale_blob + flag_section + elem_section


def decode_qrz(data: bytes) -> tuple[CompressedTensor, ScaleSet, Role]:
    """Exact inverse of encode_qrz, with full invariant validation."""
    r = _Reader(data)
    (magic, version, role_byte, base_bits, target_bits, flag_bits,
     group_size, gran, axis, ndim) = r.unpack("<4sHBBBBIBBB", "header")
    if magic != QRZ_MAGIC:
        raise BadMagic(f"expected {QRZ_MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if base_bits not in (8, 16):
        raise InvariantViolation(f"base_bits {base_bits} not supported")
    shape = _read_dims(r, ndim)
    cfg = SdrConfig(base_bits, target_bits, group_size, flag_bits)

    (n_scales,) = r.unpack("<I", "scale count")
    raw_scales = np.frombuffer(r.take(4 * n_scales, "scales"), dtype="<f4")
    scale_set = _scales_from_header(gran, axis, base_bits, role_byte, shape, raw_scales)

    rows = int(np.prod(shape[:-1], dtype=np.int64)) if len(shape) > 1 else 1
    length = shape[-1]
    gpr = -(-length // group_size) if length else 0
    n_groups = rows * gpr
    n_elems = int(np.prod(shape, dtype=np.int64))

    flag_bytes = r.take(-(-(n_groups * flag_bits) // 8), "flag")
    flags = _unpack_fields(flag_bytes, flag_bits, n_groups, "flag")
    if flags.size and int(flags.max()) > cfg.max_flag:
        raise FlagOutOfRange(
            f"flag {int(flags.max())} exceeds maximum {cfg.max_flag}"
        )

    elem_bytes = r.take(-(-(n_elems * target_bits) // 8), "element")
    fields = _unpack_fields(elem_bytes, target_bits, n_elems, "element")
    r.finish()

    signs = (fields >> (target_bits - 1)).astype(np.uint8)
    mags = (fields & ((1 << (target_bits - 1)) - 1)).astype(np.uint16)
    if np.any((mags == 0) & (signs != 0)):
        raise InvariantViolation("zero magnitude with non-canonical sign bit")

    ct = CompressedTensor(
        shape, cfg,
        flags.astype(np.uint8).reshape(rows, gpr),
        signs.reshape(shape), mags.reshape(shape),
    )
    return ct, scale_set, Role(role_byte)


# -- BTN1: base tensor container ---------------------------------------------

def write_base_tensor(bt: BaseTensor, scales: ScaleSet) -> bytes:
    """Serialize a base tensor and its scales as BTN1 (signed int16 values)."""
    if scales.base_bits != bt.base_bits:
        raise InvariantViolation("scale base_bits disagrees with the tensor")
    shape = _check_header_shape(bt.shape)
    _check_scales_match(scales, shape)
    gran, axis = _granularity_bytes(scales)
    head = struct.pack(
        "<4sHBBBBB",
        BTN_MAGIC, VERSION, int(scales.role), bt.base_bits, gran, axis, len(shape),
    )
    dims = struct.pack(f"<{len(shape)}Q", *shape)
    scale_blob = struct.pack("<I", scales.scales.size)
    scale_blob += scales.scales.astype("<f4").tobytes()
    values = bt.to_signed().astype("<i2").tobytes()
    return head + dims + scale_blob + values


def read_base_tensor(data: bytes) -> tuple[BaseTensor, ScaleSet]:
    """Parse BTN1 bytes back into a BaseTensor and its ScaleSet."""
    r = _Reader(data)
    magic, version, role_byte, base_bits, gran, axis, ndim = \
        r.unpack("<4sHBBBBB", "header")
    if magic != BTN_MAGIC:
        raise BadMagic(f"expected {BTN_MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if base_bits not in (8, 16):
        raise InvariantViolation(f"base_bits {base_bits} not supported")
    shape = _read_dims(r, ndim)
    (n_scales,) = r.unpack("<I", "scale count")
    raw_scales = np.frombuffer(r.take(4 * n_scales, "scales"), dtype="<f4")
    scale_set = _scales_from_header(gran, axis, base_bits, role_byte, shape, raw_scales)

    count = int(np.prod(shape, dtype=np.int64))
    values = np.frombuffer(r.take(2 * count, "values"), dtype="<i2").reshape(shape)
    r.finish()
    if count and int(np.abs(values.astype(np.int32)).max()) > int_max(base_bits):
        raise InvariantViolation("value exceeds the base-precision range")
    return BaseTensor.from_signed(values, base_bits), scale_set
