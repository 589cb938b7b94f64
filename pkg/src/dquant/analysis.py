"""Outlier statistics, synthetic activations, and the error-comparison sweeps.

The error metric everywhere is the Frobenius norm of the reconstruction
residual (plus its value relative to the input norm). Sweeps report one
record per (matrix, method, bit width); ordering claims are made on suite
medians only.
"""

import csv
from dataclasses import dataclass
from math import prod

import numpy as np

from . import mpo, tensor
from .errors import EmptyInput, ShapeMismatch
from .quantize import dequantize, quantize_rtn

# Synthetic-activation structure: a correlated Gaussian base built from
# sign patterns on dyadic grids with Gaussian coefficients. Fine-grained
# patterns repeat across coarse blocks, which gives the base the
# multiscale self-similarity of real activation matrices (and makes it
# compressible by block-structured factorizations, unlike iid noise).
SYNTH_TERMS = 14
SYNTH_DECAY = 0.8
SYNTH_NOISE = 0.08

METHOD_MATRIX_RTN = "matrix-rtn"
METHOD_TL_ONLY = "deco-tl-only"
METHOD_BOTH = "deco-both"
METHOD_SVD = "svd-quant"
METHOD_QR = "qr-quant"

OUTLIERS_CSV_COLUMNS = ("tensor_label", "q1", "q3", "iqr", "outlier_count", "total")
ERRORS_CSV_COLUMNS = (
    "method",
    "bits",
    "n",
    "seed",
    "frobenius_error",
    "relative_error",
    "param_overhead",
)


@dataclass(frozen=True)
class OutlierStats:
    q1: float
    q3: float
    iqr: float
    lower_fence: float
    upper_fence: float
    outlier_count: int
    total_count: int


@dataclass(frozen=True)
class ErrorRecord:
    method: str
    bits: int
    n: int
    seed: int
    frobenius_error: float
    relative_error: float
    param_overhead: float


def iqr_stats(values) -> OutlierStats:
    """Quartiles by linear interpolation at p*(n-1), fences at 1.5*IQR."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInput("iqr_stats needs at least one value")
    s = np.sort(v)
    n = s.size

    def quantile(p):
        pos = p * (n - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, n - 1)
        return float(s[lo] + (s[hi] - s[lo]) * (pos - lo))

    q1, q3 = quantile(0.25), quantile(0.75)
    iqr = q3 - q1
    lower, upper = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    count = int(np.count_nonzero((v < lower) | (v > upper)))
    return OutlierStats(q1, q3, iqr, lower, upper, count, n)


def _sign_pattern(idx: int, n: int) -> np.ndarray:
    """+-1 pattern from bit-parity of t & idx on the covering dyadic grid."""
    m = 1 << max(1, (n - 1).bit_length())
    t = np.arange(m)
    bits = t & idx
    parity = np.zeros(m, dtype=np.int64)
    while np.any(bits):
        parity ^= bits & 1
        bits >>= 1
    return (1.0 - 2.0 * parity)[:n]


def _pattern_pairs(rows: int, cols: int, count: int):
    """Diagonal enumeration of (row-pattern, col-pattern) index pairs."""
    mr = 1 << max(1, (rows - 1).bit_length())
    mc = 1 << max(1, (cols - 1).bit_length())
    r_idx = [0] + [mr >> (i + 1) for i in range(mr.bit_length() - 1)]
    c_idx = [0] + [mc >> (i + 1) for i in range(mc.bit_length() - 1)]
    pairs = []
    for s in range(1, len(r_idx) + len(c_idx)):
        for a in range(s + 1):
            b = s - a
            if a < len(r_idx) and b < len(c_idx):
                pairs.append((r_idx[a], c_idx[b]))
            if len(pairs) == count:
                return pairs
    return pairs


def synth_activations(
    rows: int,
    cols: int,
    outlier_cols: int = 8,
    outlier_scale: float = 20.0,
    seed: int = 0,
) -> np.ndarray:
    """Synthetic activation matrix: correlated Gaussian base + channel outliers.

    The base is a unit-variance Gaussian field (multiscale sign-pattern
    expansion with Gaussian coefficients plus a small iid component);
    `outlier_cols` randomly chosen columns are then scaled by
    `outlier_scale`, mimicking the channel-concentrated outliers of
    transformer activations. Deterministic for a fixed seed.
    """
    if outlier_cols > cols:
        raise ShapeMismatch("outlier_cols cannot exceed cols")
    if outlier_scale < 1:
        raise ShapeMismatch("outlier_scale must be >= 1")
    rng = np.random.default_rng(seed)
    pairs = _pattern_pairs(rows, cols, SYNTH_TERMS)
    weights = SYNTH_DECAY ** np.arange(len(pairs))
    weights *= np.sqrt((1.0 - SYNTH_NOISE**2) / np.sum(weights * weights))
    base = SYNTH_NOISE * rng.standard_normal((rows, cols))
    for (ri, ci), w in zip(pairs, weights):
        coeff = rng.standard_normal()
        base += (w * coeff) * np.outer(_sign_pattern(ri, rows), _sign_pattern(ci, cols))
    idx = rng.choice(cols, size=outlier_cols, replace=False)
    if outlier_cols:
        base[:, idx] *= outlier_scale
    return base.astype(np.float32)


def default_suite(seeds=range(20), rows=512, cols=512, outlier_cols=8, scale=20.0):
    """The reference 20-seed outlier suite used by every sweep."""
    return [
        synth_activations(rows, cols, outlier_cols, scale, seed=s) for s in seeds
    ]


def migration_report(m: np.ndarray, plan: mpo.ShapePlan = None):
    """IQR stats for the matrix and both cores of its length-2 chain.

    Returns (matrix_stats, large_stats, small_stats). On outlier-heavy
    inputs the large core's IQR collapses far below the matrix IQR while
    the small core keeps the wide values.
    """
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeMismatch("migration_report expects a matrix")
    if plan is None:
        plan = mpo.plan_shapes(m.shape[0], m.shape[1], 2)
    chain = mpo.decompose(m, plan)
    large, small = mpo.split_large_small(chain)
    return iqr_stats(m), iqr_stats(large), iqr_stats(small)


def _frob(x) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64)))


def _errors(original, reconstructed):
    err = _frob(np.asarray(original, np.float64) - np.asarray(reconstructed, np.float64))
    norm = _frob(original)
    return err, err / norm if norm else 0.0


def _quantize_cores(chain: mpo.MpoChain, bits: int, skip_first: bool) -> np.ndarray:
    cores = []
    for k, core in enumerate(chain.local_tensors):
        if k == 0 and skip_first:
            cores.append(core)
        else:
            cores.append(dequantize(quantize_rtn(core, bits)))
    return mpo.reconstruct(mpo.MpoChain(tuple(cores)))


def _chain_overhead(chain: mpo.MpoChain) -> float:
    stored = sum(t.size for t in chain.local_tensors)
    return stored / (chain.rows * chain.cols)


def strategy_sweep(suite, bits_list=(2, 4, 8)):
    """Matrix RTN vs quantizing both cores vs the large core only.

    One record per (seed, method, bits); n is fixed at 2. The tie-broken
    "large core only" path is the compression default (first core kept at
    full precision).
    """
    records = []
    for seed, m in enumerate(suite):
        plan = mpo.plan_shapes(m.shape[0], m.shape[1], 2)
        chain = mpo.decompose(m, plan)
        overhead = _chain_overhead(chain)
        for bits in bits_list:
            err, rel = _errors(m, dequantize(quantize_rtn(m, bits)))
            records.append(ErrorRecord(METHOD_MATRIX_RTN, bits, 2, seed, err, rel, 1.0))
            err, rel = _errors(m, _quantize_cores(chain, bits, skip_first=True))
            records.append(ErrorRecord(METHOD_TL_ONLY, bits, 2, seed, err, rel, overhead))
            err, rel = _errors(m, _quantize_cores(chain, bits, skip_first=False))
            records.append(ErrorRecord(METHOD_BOTH, bits, 2, seed, err, rel, overhead))
    return sorted(records, key=lambda r: (r.seed, r.method, r.bits))


def length_sweep(suite, n_list=(2, 3, 4), bits=4):
    """Compression error as the chain length grows (first core kept)."""
    records = []
    for seed, m in enumerate(suite):
        for n in n_list:
            plan = mpo.plan_shapes(m.shape[0], m.shape[1], n)
            chain = mpo.decompose(m, plan)
            err, rel = _errors(m, _quantize_cores(chain, bits, skip_first=True))
            records.append(
                ErrorRecord(
                    METHOD_TL_ONLY, bits, n, seed, err, rel, _chain_overhead(chain)
                )
            )
    return sorted(records, key=lambda r: (r.seed, r.n, r.bits))


def _svd_protocol(m, bits):
    u, s, vt = tensor.svd(m)
    root = np.sqrt(s.astype(np.float64))
    a = u.astype(np.float64) * root
    b = root[:, None] * vt.astype(np.float64)
    # quantize the larger factor, tie toward the second (mirrors the chain rule)
    if a.size > b.size:
        rec = dequantize(quantize_rtn(a.astype(np.float32), bits)).astype(np.float64) @ b
    else:
        rec = a @ dequantize(quantize_rtn(b.astype(np.float32), bits)).astype(np.float64)
    overhead = (a.size + b.size) / m.size
    return rec, overhead


def _qr_protocol(m, bits):
    q, r = tensor.qr(m)
    q64, r64 = q.astype(np.float64), r.astype(np.float64)
    if q.size > r.size:
        rec = dequantize(quantize_rtn(q, bits)).astype(np.float64) @ r64
    else:
        rec = q64 @ dequantize(quantize_rtn(r, bits)).astype(np.float64)
    overhead = (q.size + r.size) / m.size
    return rec, overhead


def decomposition_comparison(suite, bits=4):
    """Chain vs SVD vs QR under the same rule: quantize the larger factor.

    The SVD baseline splits W = (U*sqrt(S)) @ (sqrt(S)*Vt) so both factors
    carry comparable scale; QR uses W = Q @ R. Parameter overhead is total
    stored values over the original count.
    """
    records = []
    for seed, m in enumerate(suite):
        plan = mpo.plan_shapes(m.shape[0], m.shape[1], 2)
        chain = mpo.decompose(m, plan)
        err, rel = _errors(m, _quantize_cores(chain, bits, skip_first=True))
        records.append(
            ErrorRecord(METHOD_TL_ONLY, bits, 2, seed, err, rel, _chain_overhead(chain))
        )
        rec, overhead = _svd_protocol(m, bits)
        err, rel = _errors(m, rec)
        records.append(ErrorRecord(METHOD_SVD, bits, 2, seed, err, rel, overhead))
        rec, overhead = _qr_protocol(m, bits)
        err, rel = _errors(m, rec)
        records.append(ErrorRecord(METHOD_QR, bits, 2, seed, err, rel, overhead))
    return sorted(records, key=lambda r: (r.seed, r.method, r.bits))


def median_by(records, key=lambda r: (r.method, r.bits)):
    """Median frobenius_error grouped by an arbitrary record key."""
    groups = {}
    for r in records:
        groups.setdefault(key(r), []).append(r.frobenius_error)
    return {k: float(np.median(v)) for k, v in sorted(groups.items())}


def write_outliers_csv(rows, path):
    """rows: iterable of (label, OutlierStats)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(OUTLIERS_CSV_COLUMNS)
        for label, st in rows:
            writer.writerow(
                [label, repr(st.q1), repr(st.q3), repr(st.iqr), st.outlier_count,
                 st.total_count]
            )


def write_errors_csv(records, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ERRORS_CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [r.method, r.bits, r.n, r.seed, repr(r.frobenius_error),
                 repr(r.relative_error), repr(r.param_overhead)]
            )
