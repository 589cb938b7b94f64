"""Decompose-then-quantize compression of matrices.

A matrix is tensor-train factorized, every core except the first (the
small, dynamic-range-heavy one) is quantized to B-bit integers, and the
first core stays at full precision. Reads either rebuild the matrix
(deco_dequantize) or stream through the packed payloads tile-by-tile
(fused_matmul / fused_matmul_t) without ever materializing a dequantized
core: the transient dequantized buffer never exceeds one 64x64 tile.
"""

from dataclasses import dataclass
from math import prod

import numpy as np

from . import mpo
from .errors import ShapeMismatch
from .quantize import QuantizedTensor, dequantize, quantize_rtn, unpack_range

TILE_ELEMENTS = 64 * 64


class WorkingSetMeter:
    """Tracks transient dequantized buffer sizes inside fused multiplies."""

    def __init__(self):
        self.peak_elements = 0
        self.total_unpacked = 0

    def record(self, n_elements: int):
        self.total_unpacked += n_elements
        if n_elements > self.peak_elements:
            self.peak_elements = n_elements


@dataclass(frozen=True)
class QuantizedMpo:
    """A core chain where all cores but the first are bit-packed."""

    plan: mpo.ShapePlan
    bits: int
    local_tensors: tuple  # np.ndarray (full precision) or QuantizedTensor

    def __post_init__(self):
        shapes = [t.shape for t in self.local_tensors]
        if len(shapes) != self.plan.n:
            raise ShapeMismatch("chain length disagrees with plan")
        for k, s in enumerate(shapes):
            expected = (
                1 if k == 0 else shapes[k - 1][3],
                self.plan.i_factors[k],
                self.plan.j_factors[k],
            )
            if tuple(s[:3]) != expected or (k == len(shapes) - 1 and s[3] != 1):
                raise ShapeMismatch(f"core {k} has shape {s}, expected {expected}")

    @property
    def rows(self) -> int:
        return self.plan.rows

    @property
    def cols(self) -> int:
        return self.plan.cols

    @property
    def quantized_locals(self) -> tuple:
        return tuple(t for t in self.local_tensors if isinstance(t, QuantizedTensor))

    @property
    def fp_locals(self) -> tuple:
        return tuple(
            t for t in self.local_tensors if not isinstance(t, QuantizedTensor)
        )


@dataclass(frozen=True)
class CompressionReport:
    """Stored-size accounting against a 16-bit uncompressed baseline."""

    ratio: float
    bytes_original: int
    bytes_compressed: int


def deco_quantize(m: np.ndarray, bits: int, n: int = 2) -> QuantizedMpo:
    """Factorize and quantize every core except the first."""
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got shape {m.shape}")
    plan = mpo.plan_shapes(m.shape[0], m.shape[1], n)
    chain = mpo.decompose(m, plan)
    cores = [chain.local_tensors[0]]
    cores += [quantize_rtn(t, bits) for t in chain.local_tensors[1:]]
    return QuantizedMpo(plan=plan, bits=bits, local_tensors=tuple(cores))


def _rebuild_chain(q: QuantizedMpo) -> mpo.MpoChain:
    cores = [
        dequantize(t) if isinstance(t, QuantizedTensor) else t
        for t in q.local_tensors
    ]
    return mpo.MpoChain(tuple(cores))


def deco_dequantize(q: QuantizedMpo) -> np.ndarray:
    """Recover the full-precision matrix (reference path, materializes)."""
    return mpo.reconstruct(_rebuild_chain(q))


def _gemm_packed_right(a: np.ndarray, qt: QuantizedTensor, rows: int, cols: int, meter):
    """a @ M for a packed matrix M of shape (rows, cols), tiled unpacking."""
    scale = np.float64(qt.scale)
    out = np.zeros((a.shape[0], cols), dtype=np.float64)
    if cols <= TILE_ELEMENTS:
        row_tile = max(1, TILE_ELEMENTS // cols)
        for r0 in range(0, rows, row_tile):
            r1 = min(rows, r0 + row_tile)
            codes = unpack_range(qt.payload, r0 * cols, (r1 - r0) * cols, qt.bits)
            if meter is not None:
                meter.record(codes.size)
            tile = codes.astype(np.float64).reshape(r1 - r0, cols) * scale
            out += a[:, r0:r1] @ tile
    else:
        for r in range(rows):
            for c0 in range(0, cols, TILE_ELEMENTS):
                c1 = min(cols, c0 + TILE_ELEMENTS)
                codes = unpack_range(qt.payload, r * cols + c0, c1 - c0, qt.bits)
                if meter is not None:
                    meter.record(codes.size)
                out[:, c0:c1] += np.outer(a[:, r], codes.astype(np.float64) * scale)
    return out


def _gemm_packed_left(qt: QuantizedTensor, rows: int, cols: int, b: np.ndarray, meter):
    """M @ b for a packed matrix M of shape (rows, cols), tiled unpacking."""
    scale = np.float64(qt.scale)
    out = np.empty((rows, b.shape[1]), dtype=np.float64)
    if cols <= TILE_ELEMENTS:
        row_tile = max(1, TILE_ELEMENTS // cols)
        for r0 in range(0, rows, row_tile):
            r1 = min(rows, r0 + row_tile)
            codes = unpack_range(qt.payload, r0 * cols, (r1 - r0) * cols, qt.bits)
            if meter is not None:
                meter.record(codes.size)
            tile = codes.astype(np.float64).reshape(r1 - r0, cols) * scale
            out[r0:r1] = tile @ b
        return out
    out[:] = 0.0
    for r in range(rows):
        for c0 in range(0, cols, TILE_ELEMENTS):
            c1 = min(cols, c0 + TILE_ELEMENTS)
            codes = unpack_range(qt.payload, r * cols + c0, c1 - c0, qt.bits)
            if meter is not None:
                meter.record(codes.size)
            out[r] += (codes.astype(np.float64) * scale) @ b[c0:c1]
    return out


def fused_matmul(x: np.ndarray, q: QuantizedMpo, meter: WorkingSetMeter = None):
    """x @ W for the compressed matrix W, streaming the packed cores.

    Sweeps the chain left to right: the full-precision first core is
    applied directly, each packed core through the tiled GEMM. Matches
    matmul(x, deco_dequantize(q)) within 1e-4 relative Frobenius.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != q.rows:
        raise ShapeMismatch(f"operand shape {x.shape} does not match rows {q.rows}")
    p = x.shape[0]
    i_f, j_f = q.plan.i_factors, q.plan.j_factors
    n = q.plan.n
    # state: (p, i_k..i_n, J_acc, d_{k-1}) flattened views
    cur = np.asarray(x, dtype=np.float64).reshape((p,) + tuple(i_f) + (1, 1))
    j_acc = 1
    d = 1
    for k in range(n):
        ik, jk = i_f[k], j_f[k]
        i_rest = prod(i_f[k + 1 :], start=1)
        # (p, ik, i_rest, j_acc, d) -> (p, i_rest, j_acc, d, ik)
        cur = cur.reshape(p, ik, i_rest, j_acc, d)
        cur = np.ascontiguousarray(np.transpose(cur, (0, 2, 3, 4, 1)))
        a = cur.reshape(p * i_rest * j_acc, d * ik)
        core = q.local_tensors[k]
        d_next = core.shape[3]
        if isinstance(core, QuantizedTensor):
            out = _gemm_packed_right(a, core, d * ik, jk * d_next, meter)
        else:
            out = a @ np.asarray(core, dtype=np.float64).reshape(d * ik, jk * d_next)
        j_acc *= jk
        d = d_next
        cur = out.reshape(p, i_rest, j_acc, d)
    return np.ascontiguousarray(cur.reshape(p, q.cols).astype(np.float32))


def fused_matmul_t(x: np.ndarray, q: QuantizedMpo, meter: WorkingSetMeter = None):
    """x @ W.T, streaming the packed cores (right-to-left sweep).

    Needed by attention reads (q_row @ K.T). Same working-set contract as
    fused_matmul: dequantized transients never exceed one tile.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != q.cols:
        raise ShapeMismatch(f"operand shape {x.shape} does not match cols {q.cols}")
    p = x.shape[0]
    i_f, j_f = q.plan.i_factors, q.plan.j_factors
    n = q.plan.n
    # state: (j_1..j_k, d_k, I_acc, p); contract cores from the right
    cur = np.ascontiguousarray(np.asarray(x, dtype=np.float64).T).reshape(
        tuple(j_f) + (1, 1, p)
    )
    i_acc = 1
    for k in range(n - 1, -1, -1):
        ik, jk = i_f[k], j_f[k]
        d_prev = 1 if k == 0 else q.local_tensors[k - 1].shape[3]
        d_k = q.local_tensors[k].shape[3]
        j_lead = prod(j_f[:k], start=1)
        # (j_lead, jk, d_k, i_acc, p) -> (jk, d_k, j_lead, i_acc, p)
        cur = cur.reshape(j_lead, jk, d_k, i_acc, p)
        cur = np.ascontiguousarray(np.transpose(cur, (1, 2, 0, 3, 4)))
        b = cur.reshape(jk * d_k, j_lead * i_acc * p)
        core = q.local_tensors[k]
        if isinstance(core, QuantizedTensor):
            out = _gemm_packed_left(core, d_prev * ik, jk * d_k, b, meter)
        else:
            out = np.asarray(core, dtype=np.float64).reshape(d_prev * ik, jk * d_k) @ b
        # (d_prev, ik, j_lead, i_acc, p) -> (j_lead, d_prev, ik, i_acc, p)
        out = out.reshape(d_prev, ik, j_lead, i_acc, p)
        out = np.ascontiguousarray(np.transpose(out, (2, 0, 1, 3, 4)))
        i_acc *= ik
        cur = out.reshape(j_lead, d_prev, i_acc, p)
    return np.ascontiguousarray(cur.reshape(q.rows, p).T.astype(np.float32))


def compression_report(q: QuantizedMpo) -> CompressionReport:
    """Bit-weighted size of the stored cores over the 16-bit original."""
    n_quant = sum(t.count for t in q.quantized_locals)
    n_fp = sum(t.size for t in q.fp_locals)
    n_scales = len(q.quantized_locals)
    numerator_bits = n_quant * q.bits + n_fp * 16 + n_scales * 16
    original_bits = q.rows * q.cols * 16
    bytes_compressed = (
        sum(len(t.payload) for t in q.quantized_locals) + 2 * n_scales + 2 * n_fp
    )
    return CompressionReport(
        ratio=numerator_bits / original_bits,
        bytes_original=q.rows * q.cols * 2,
        bytes_compressed=bytes_compressed,
    )
