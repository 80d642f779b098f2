"""Exception hierarchy.

Every error raised by this package derives from QrazorError, so CLI code can
catch one type and map it to a machine-readable error line.
"""


class QrazorError(Exception):
    """Base class for all qrazor errors."""


# -- calibration / quantization ------------------------------------------

class EmptyCalibration(QrazorError):
    """No calibration samples were supplied."""


class AllZeroSlot(QrazorError):
    """A scale slot saw only zeros; an absmax scale cannot be derived."""


class ShapeMismatch(QrazorError):
    """Tensor shape is incompatible with the scale set or operand layout."""


class UnsupportedValue(QrazorError):
    """A tensor payload contains non-finite values."""


# -- SDR compression ------------------------------------------------------

class ConfigViolation(QrazorError):
    """An SdrConfig (or a tensor/config pairing) breaks its invariants."""


class CorruptFlag(QrazorError):
    """A group flag exceeds the bound allowed by the configuration."""


# -- compressed arithmetic -------------------------------------------------

class LengthMismatch(QrazorError):
    """Paired groups have different element counts."""


class ShiftOverflow(QrazorError):
    """A group-pair shift would push the accumulator past the 64-bit budget."""


class PlanInvalid(QrazorError):
    """A matmul plan violates its operand/scale invariants."""


# -- serialization ---------------------------------------------------------

class InvariantViolation(QrazorError):
    """Data handed to an encoder (or found in a stream) breaks an invariant."""


class BadMagic(QrazorError):
    """Stream does not start with the expected magic bytes."""


class BadVersion(QrazorError):
    """Stream has an unsupported format version."""


class TruncatedStream(QrazorError):
    """Stream ended before the length implied by its header."""


class FlagOutOfRange(QrazorError):
    """A decoded group flag exceeds the configuration's legal maximum."""


class UnsupportedDtype(QrazorError):
    """Stream declares a payload dtype this version does not support."""
