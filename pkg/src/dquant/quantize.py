"""Symmetric round-to-nearest quantization and low-bit payload packing.

Quantization uses a single positive step size per tensor:

    step = max(|t|) / (2**(bits-1) - 1)
    code = clamp(round_half_away_from_zero(t / step), -qmax, qmax)

The code range is symmetric: the most negative two's-complement value
(-2**(bits-1)) is never produced.

Packed payload layout (stable wire format): codes are stored in row-major
element order, two's complement within `bits` bits, little-endian bit
order inside each byte - the earliest element occupies the lowest-order
bits. Example at bits=4: values [1, -1] pack to the single byte 0xF1.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CorruptPayload, NonFiniteInput, RangeOverflow, UnsupportedBits

SUPPORTED_BITS = (2, 4, 8)


def _check_bits(bits):
    if bits not in SUPPORTED_BITS:
        raise UnsupportedBits(f"bits must be one of {SUPPORTED_BITS}, got {bits}")


def payload_size(count: int, bits: int) -> int:
    """Number of payload bytes for `count` packed codes."""
    return (count * bits + 7) // 8


@dataclass(frozen=True)
class QuantizedTensor:
    """Bit-packed signed codes plus the scale needed to dequantize them."""

    shape: tuple
    bits: int
    scale: float
    payload: bytes

    def __post_init__(self):
        _check_bits(self.bits)
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if self.scale <= 0:
            raise CorruptPayload(f"scale must be positive, got {self.scale}")
        expected = payload_size(self.count, self.bits)
        if len(self.payload) != expected:
            raise CorruptPayload(
                f"payload is {len(self.payload)} bytes, expected {expected} "
                f"for shape {self.shape} at {self.bits} bits"
            )

    @property
    def count(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    def codes(self) -> np.ndarray:
        """Unpacked signed codes in row-major order."""
        return unpack(self.payload, self.count, self.bits)


def pack(values, bits: int) -> bytes:
    """Bit-pack small signed integers (low bits first within each byte)."""
    _check_bits(bits)
    v = np.asarray(values, dtype=np.int64).ravel()
    qmax = (1 << (bits - 1)) - 1
    if v.size and (v.min() < -qmax or v.max() > qmax):
        raise RangeOverflow(f"values outside [-{qmax}, {qmax}] at {bits} bits")
    mask = (1 << bits) - 1
    u = (v & mask).astype(np.uint8)
    per = 8 // bits
    if u.size % per:
        u = np.concatenate([u, np.zeros(per - u.size % per, dtype=np.uint8)])
    u = u.reshape(-1, per)
    out = np.zeros(u.shape[0], dtype=np.uint8)
    for i in range(per):
        out |= u[:, i] << (bits * i)
    return out.tobytes()


def unpack(payload: bytes, count: int, bits: int) -> np.ndarray:
    """Inverse of pack; returns int8 codes."""
    _check_bits(bits)
    if len(payload) != payload_size(count, bits):
        raise CorruptPayload(
            f"payload is {len(payload)} bytes, expected {payload_size(count, bits)}"
        )
    return _unpack_bytes(np.frombuffer(payload, dtype=np.uint8), count, bits, skip=0)


def unpack_range(payload: bytes, start: int, count: int, bits: int) -> np.ndarray:
    """Unpack codes for elements [start, start+count) without touching the rest.

    Elements never straddle byte boundaries (bits divides 8), so only the
    covering byte range is read. This is the primitive the fused multiply
    uses to dequantize tile-by-tile.
    """
    _check_bits(bits)
    per = 8 // bits
    byte0 = start // per
    byte1 = (start + count + per - 1) // per
    if byte1 > len(payload) or start < 0:
        raise CorruptPayload("requested element range exceeds payload")
    chunk = np.frombuffer(payload, dtype=np.uint8, count=byte1 - byte0, offset=byte0)
    return _unpack_bytes(chunk, count, bits, skip=start - byte0 * per)


def _unpack_bytes(chunk, count, bits, skip):
    per = 8 // bits
    mask = (1 << bits) - 1
    sign = 1 << (bits - 1)
    lanes = np.empty((len(chunk), per), dtype=np.uint8)
    for i in range(per):
        lanes[:, i] = (chunk >> (bits * i)) & mask
    flat = lanes.reshape(-1)[skip : skip + count].astype(np.int16)
    return ((flat ^ sign) - sign).astype(np.int8)


def quantize_rtn(t: np.ndarray, bits: int) -> QuantizedTensor:
    """Quantize a tensor with one symmetric scale (round half away from zero).

    A degenerate all-zero input gets scale 1.0 and all-zero codes so that
    dequantization reproduces it exactly.
    """
    _check_bits(bits)
    t = np.asarray(t)
    if t.size and not np.all(np.isfinite(t)):
        raise NonFiniteInput("quantize_rtn requires finite entries")
    qmax = (1 << (bits - 1)) - 1
    amax = float(np.max(np.abs(t))) if t.size else 0.0
    scale = np.float32(amax / qmax) if amax > 0 else np.float32(1.0)
    if amax == 0.0 or float(scale) == 0.0:
        # zero input, or a subnormal max that underflows the float32 step:
        # store step 1.0 and all-zero codes
        scale = np.float32(1.0)
        codes = np.zeros(t.shape, dtype=np.float64)
    else:
        # w * qmax / max(|t|) keeps exactly-representable ties exact, unlike
        # dividing by the rounded float32 step
        y = np.asarray(t, dtype=np.float64) * qmax / amax
        codes = np.clip(np.copysign(np.floor(np.abs(y) + 0.5), y), -qmax, qmax)
    return QuantizedTensor(
        shape=tuple(t.shape),
        bits=bits,
        scale=float(scale),
        payload=pack(codes.astype(np.int64), bits),
    )


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """Codes times scale, as float32, in the original shape."""
    codes = unpack(q.payload, q.count, q.bits)
    return (codes.astype(np.float32) * np.float32(q.scale)).reshape(q.shape)
