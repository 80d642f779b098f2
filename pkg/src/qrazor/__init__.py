"""Two-stage integer quantization: absmax base quantization, per-group
salient-bit compression, and decompression-free integer matmul."""

from .analysis import (
    CostReport,
    ErrorReport,
    LeadingOneHistogram,
    compression_error_report,
    dmq_baseline,
    leading_one_histogram,
    ops_cost,
)
from .arith import (
    MatmulPlan,
    mac_group,
    mac_group_decompress_oracle,
    matmul_compressed,
    matmul_integer,
    max_pair_shift,
)
from .kernels import BACKEND
from .packfmt import (
    decode_qrz,
    effective_bits,
    encode_qrz,
    read_base_tensor,
    read_tensor_container,
    write_base_tensor,
    write_tensor_container,
)
from .quantizer import (
    BaseTensor,
    PerChannel,
    PerTensor,
    Role,
    ScaleSet,
    calibrate_absmax,
    dequantize_base,
    quantize_base,
)
from .sdr import (
    CompressedGroup,
    CompressedTensor,
    SdrConfig,
    compress_group,
    compress_group_reference,
    compress_tensor,
    decompress_group,
    decompress_tensor,
    detect_razoring_point,
)

__version__ = "0.1.0"
