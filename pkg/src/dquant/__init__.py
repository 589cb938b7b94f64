"""Data-free matrix and KV-cache compression via tensor-train factorization.

A matrix is split into a chain of small cores; all but the first core are
quantized to 2/4/8-bit integers with one symmetric scale each, while the
first core (which absorbs the wide values) stays at full precision.
Reads either rebuild the matrix or stream the packed cores tile-by-tile
through fused multiplies.
"""

from .analysis import (
    ErrorRecord,
    OutlierStats,
    decomposition_comparison,
    default_suite,
    iqr_stats,
    length_sweep,
    migration_report,
    strategy_sweep,
    synth_activations,
)
from .compress import (
    CompressionReport,
    QuantizedMpo,
    WorkingSetMeter,
    compression_report,
    deco_dequantize,
    deco_quantize,
    fused_matmul,
    fused_matmul_t,
)
from .kvcache import CacheConfig, KvCache, MemoryLedger, simulate_generation
from .mpo import MpoChain, ShapePlan, decompose, plan_shapes, reconstruct, split_large_small
from .quantize import QuantizedTensor, dequantize, pack, quantize_rtn, unpack
from .tensor import DenseTensor, QrResult, SvdResult, matmul, permute, qr, reshape, svd

__all__ = [
    "CacheConfig",
    "CompressionReport",
    "DenseTensor",
    "ErrorRecord",
    "KvCache",
    "MemoryLedger",
    "MpoChain",
    "OutlierStats",
    "QrResult",
    "QuantizedMpo",
    "QuantizedTensor",
    "ShapePlan",
    "SvdResult",
    "WorkingSetMeter",
    "compression_report",
    "deco_dequantize",
    "deco_quantize",
    "decompose",
    "decomposition_comparison",
    "default_suite",
    "dequantize",
    "fused_matmul",
    "fused_matmul_t",
    "iqr_stats",
    "length_sweep",
    "matmul",
    "migration_report",
    "pack",
    "permute",
    "plan_shapes",
    "qr",
    "quantize_rtn",
    "reconstruct",
    "reshape",
    "simulate_generation",
    "split_large_small",
    "strategy_sweep",
    "svd",
    "synth_activations",
    "unpack",
]

__version__ = "0.1.0"
