"""Per-layer key/value cache with chunk-triggered compression.

Lifecycle: prefill stores each of K and V as one compressed segment;
decode appends full-precision rows to a tail buffer, and the moment the
tail reaches `chunk_len` rows it is compressed into a new immutable
segment and the tail resets. Attention-side reads stream quantized
segments through the fused multiply so no full-precision copy of a
segment is ever materialized; the tail is multiplied directly.

In full-precision mode (bits=None) segments are stored as plain arrays
and every read is bit-exact.

All byte accounting is against a 16-bit baseline: full-precision values
(stored as float32 in memory) are counted at 2 bytes, packed payloads at
their true size, one 2-byte scale per quantized core.
"""

import csv
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .compress import (
    QuantizedMpo,
    compression_report,
    deco_dequantize,
    deco_quantize,
    fused_matmul_t,
)
from .errors import AlreadyPrefilled, DimMismatch, LayerOutOfRange, ShapeMismatch
from .quantize import SUPPORTED_BITS, UnsupportedBits

TRACE_COLUMNS = (
    "step",
    "tokens",
    "segments",
    "bytes_actual",
    "bytes_fp16_equivalent",
    "bytes_moved_read",
    "score_deviation",
)


@dataclass(frozen=True)
class CacheConfig:
    layers: int
    dim: int
    bits: int = None  # None = full-precision mode
    chunk_len: int = 1024
    n: int = 2

    def __post_init__(self):
        if self.layers < 1 or self.dim < 1:
            raise ShapeMismatch("layers and dim must be >= 1")
        if self.chunk_len < 1:
            raise ShapeMismatch("chunk_len must be >= 1")
        if self.bits is not None and self.bits not in SUPPORTED_BITS:
            raise UnsupportedBits(f"bits must be in {SUPPORTED_BITS} or None")
        if self.n < 2:
            raise ShapeMismatch("decomposition length must be >= 2")


@dataclass(frozen=True)
class MemoryLedger:
    bytes_fp16_equivalent: int
    bytes_actual: int
    bytes_moved_read: int

    @property
    def ratio(self) -> float:
        if self.bytes_fp16_equivalent == 0:
            return 1.0
        return self.bytes_actual / self.bytes_fp16_equivalent


class LayerCache:
    """Single-writer store for one layer's keys and values."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self.key_segments = []  # QuantizedMpo (or ndarray in fp mode)
        self.value_segments = []
        self._seg_rows = []  # token rows per segment
        d = config.dim
        self.key_tail = np.zeros((config.chunk_len, d), dtype=np.float32)
        self.value_tail = np.zeros((config.chunk_len, d), dtype=np.float32)
        self.tail_len = 0

    @property
    def tokens(self) -> int:
        return sum(self._seg_rows) + self.tail_len

    def _compress(self, block: np.ndarray):
        if self.config.bits is None:
            return np.ascontiguousarray(block, dtype=np.float32)
        return deco_quantize(block, self.config.bits, self.config.n)

    def prefill(self, keys: np.ndarray, values: np.ndarray):
        if self.tokens:
            raise AlreadyPrefilled("layer already holds tokens")
        keys = np.asarray(keys, dtype=np.float32)
        values = np.asarray(values, dtype=np.float32)
        if keys.shape != values.shape or keys.ndim != 2:
            raise DimMismatch("keys and values must both be T x D")
        if keys.shape[1] != self.config.dim:
            raise DimMismatch(
                f"row width {keys.shape[1]} differs from dim {self.config.dim}"
            )
        if keys.shape[0] == 0:
            return
        self.key_segments.append(self._compress(keys))
        self.value_segments.append(self._compress(values))
        self._seg_rows.append(keys.shape[0])

    def append(self, k_row: np.ndarray, v_row: np.ndarray):
        k_row = np.asarray(k_row, dtype=np.float32).reshape(-1)
        v_row = np.asarray(v_row, dtype=np.float32).reshape(-1)
        if k_row.shape != (self.config.dim,) or v_row.shape != (self.config.dim,):
            raise DimMismatch(f"rows must have width {self.config.dim}")
        self.key_tail[self.tail_len] = k_row
        self.value_tail[self.tail_len] = v_row
        self.tail_len += 1
        if self.tail_len == self.config.chunk_len:
            self.key_segments.append(self._compress(self.key_tail))
            self.value_segments.append(self._compress(self.value_tail))
            self._seg_rows.append(self.config.chunk_len)
            self.tail_len = 0

    def _segment_bytes(self, seg) -> int:
        if isinstance(seg, QuantizedMpo):
            return compression_report(seg).bytes_compressed
        return seg.size * 2

    def ledger_bytes(self):
        actual = 0
        for seg in self.key_segments + self.value_segments:
            actual += self._segment_bytes(seg)
        actual += 2 * self.tail_len * self.config.dim * 2
        fp16 = 2 * self.tokens * self.config.dim * 2  # K and V at 2 bytes/value
        return fp16, actual


class KvCache:
    """All layers plus read-traffic accounting."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self.layers = [LayerCache(config) for _ in range(config.layers)]
        self.bytes_moved_read = 0

    def _layer(self, layer: int) -> LayerCache:
        if not 0 <= layer < self.config.layers:
            raise LayerOutOfRange(f"layer {layer} outside 0..{self.config.layers - 1}")
        return self.layers[layer]

    def prefill(self, layer: int, keys, values):
        self._layer(layer).prefill(keys, values)

    def append_token(self, layer: int, k_row, v_row):
        self._layer(layer).append(k_row, v_row)

    def _read(self, layer: int, segments, tail, tail_len) -> np.ndarray:
        lc = self._layer(layer)
        parts = []
        for seg in segments:
            if isinstance(seg, QuantizedMpo):
                parts.append(deco_dequantize(seg))
                self.bytes_moved_read += lc._segment_bytes(seg)
            else:
                parts.append(seg)
                self.bytes_moved_read += seg.size * 2
        if tail_len:
            parts.append(tail[:tail_len])
            self.bytes_moved_read += tail_len * self.config.dim * 2
        if not parts:
            return np.zeros((0, self.config.dim), dtype=np.float32)
        return np.concatenate(parts, axis=0)

    def read_keys(self, layer: int) -> np.ndarray:
        lc = self._layer(layer)
        return self._read(layer, lc.key_segments, lc.key_tail, lc.tail_len)

    def read_values(self, layer: int) -> np.ndarray:
        lc = self._layer(layer)
        return self._read(layer, lc.value_segments, lc.value_tail, lc.tail_len)

    def attention_scores(self, layer: int, q_row: np.ndarray) -> np.ndarray:
        """q @ K^T / sqrt(D), streaming quantized segments (1 x T)."""
        lc = self._layer(layer)
        q_row = np.asarray(q_row, dtype=np.float32).reshape(1, -1)
        if q_row.shape[1] != self.config.dim:
            raise DimMismatch(f"query width {q_row.shape[1]} != {self.config.dim}")
        parts = []
        for seg in lc.key_segments:
            if isinstance(seg, QuantizedMpo):
                parts.append(fused_matmul_t(q_row, seg))
                self.bytes_moved_read += lc._segment_bytes(seg)
            else:
                parts.append(
                    (q_row.astype(np.float64) @ seg.astype(np.float64).T).astype(
                        np.float32
                    )
                )
                self.bytes_moved_read += seg.size * 2
        if lc.tail_len:
            tail = lc.key_tail[: lc.tail_len]
            parts.append(
                (q_row.astype(np.float64) @ tail.astype(np.float64).T).astype(
                    np.float32
                )
            )
            self.bytes_moved_read += lc.tail_len * self.config.dim * 2
        if not parts:
            return np.zeros((1, 0), dtype=np.float32)
        scores = np.concatenate(parts, axis=1)
        return (scores / np.float32(np.sqrt(self.config.dim))).astype(np.float32)

    def ledger(self) -> MemoryLedger:
        fp16 = actual = 0
        for lc in self.layers:
            f, a = lc.ledger_bytes()
            fp16 += f
            actual += a
        return MemoryLedger(fp16, actual, self.bytes_moved_read)


def _check_invariants(cache: KvCache, expected_tokens: int):
    for lc in cache.layers:
        assert lc.tokens == expected_tokens, "token conservation violated"
        assert 0 <= lc.tail_len < cache.config.chunk_len, "tail exceeded chunk_len"


def simulate_generation(
    config: CacheConfig,
    prompt_len: int,
    gen_len: int,
    seed: int = 0,
    audit: bool = False,
):
    """Drive a toy random-projection attention stack through the cache.

    Synthetic hidden states go through fixed random projections to make
    K/V/query rows; the cache is prefilled with the prompt and fed one
    token at a time. In audit mode an uncompressed shadow cache runs in
    parallel and the per-step relative attention-score deviation (median
    across layers) is recorded.

    Returns (final MemoryLedger, list of per-step trace dicts). Token
    conservation and the tail-length bound are asserted every step.
    """
    if prompt_len < 0 or gen_len < 0:
        raise ShapeMismatch("lengths must be >= 0")
    rng = np.random.default_rng(seed)
    d = config.dim
    w_k = rng.standard_normal((config.layers, d, d)) / np.sqrt(d)
    w_v = rng.standard_normal((config.layers, d, d)) / np.sqrt(d)
    w_q = rng.standard_normal((config.layers, d, d)) / np.sqrt(d)

    cache = KvCache(config)
    shadow = None
    if audit:
        shadow = KvCache(
            CacheConfig(config.layers, d, None, config.chunk_len, config.n)
        )

    for layer in range(config.layers):
        if prompt_len:
            h = rng.standard_normal((prompt_len, d))
            keys = (h @ w_k[layer]).astype(np.float32)
            values = (h @ w_v[layer]).astype(np.float32)
            cache.prefill(layer, keys, values)
            if shadow is not None:
                shadow.prefill(layer, keys, values)
    _check_invariants(cache, prompt_len)

    def snapshot(step, tokens, deviation):
        led = cache.ledger()
        return {
            "step": step,
            "tokens": tokens,
            "segments": sum(len(lc.key_segments) for lc in cache.layers),
            "bytes_actual": led.bytes_actual,
            "bytes_fp16_equivalent": led.bytes_fp16_equivalent,
            "bytes_moved_read": led.bytes_moved_read,
            "score_deviation": deviation,
        }

    trace = [snapshot(0, prompt_len, None)]
    for step in range(1, gen_len + 1):
        deviations = []
        h = rng.standard_normal((1, d))
        for layer in range(config.layers):
            k_row = (h @ w_k[layer]).astype(np.float32)
            v_row = (h @ w_v[layer]).astype(np.float32)
            if audit and cache.layers[layer].tokens:
                q_row = (h @ w_q[layer]).astype(np.float32)
                got = cache.attention_scores(layer, q_row)
                ref = shadow.attention_scores(layer, q_row)
                denom = float(np.linalg.norm(ref))
                dev = float(np.linalg.norm(got - ref)) / denom if denom else 0.0
                deviations.append(dev)
            cache.append_token(layer, k_row, v_row)
            if shadow is not None:
                shadow.append_token(layer, k_row, v_row)
        _check_invariants(cache, prompt_len + step)
        dev = median(deviations) if deviations else None
        trace.append(snapshot(step, prompt_len + step, dev))
    return cache.ledger(), trace


def write_trace_csv(trace, path):
    """Write the per-step trace using the stable column schema."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for row in trace:
            out = [row[c] for c in TRACE_COLUMNS[:-1]]
            dev = row["score_deviation"]
            out.append("" if dev is None else repr(dev))
            writer.writerow(out)
