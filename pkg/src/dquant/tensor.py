"""Dense float32 tensors and the linear-algebra primitives built on them.

Tensors are plain C-contiguous float32 numpy arrays. All accumulation
happens in float64; results are stored back as float32.
"""

from typing import NamedTuple

import numpy as np

from .errors import (
    InvalidPermutation,
    NoConvergence,
    NonFiniteInput,
    ShapeMismatch,
    SizeMismatch,
)

DenseTensor = np.ndarray


def as_tensor(data, shape=None) -> np.ndarray:
    """Coerce nested data to a C-contiguous float32 array."""
    t = np.ascontiguousarray(data, dtype=np.float32)
    if shape is not None:
        t = reshape(t, shape)
    return t


class SvdResult(NamedTuple):
    u: np.ndarray
    singular_values: np.ndarray
    vt: np.ndarray


class QrResult(NamedTuple):
    q: np.ndarray
    rmat: np.ndarray


def _require_2d(m, op):
    if np.ndim(m) != 2:
        raise ShapeMismatch(f"{op} expects a 2-D tensor, got shape {np.shape(m)}")


def _require_finite(m, op):
    if m.size and not np.all(np.isfinite(m)):
        raise NonFiniteInput(f"{op} requires finite entries")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation, stored as float32."""
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)
    return out.astype(np.float32)


def reshape(t: np.ndarray, new_shape) -> np.ndarray:
    """Reinterpret the row-major buffer under a new shape."""
    new_shape = tuple(int(d) for d in new_shape)
    if int(np.prod(new_shape, dtype=np.int64)) != t.size:
        raise SizeMismatch(f"cannot reshape {t.shape} (size {t.size}) to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def permute(t: np.ndarray, axes) -> np.ndarray:
    """Reorder axes and materialize the result in row-major order."""
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise InvalidPermutation(f"{axes} is not a permutation of 0..{t.ndim - 1}")
    return np.ascontiguousarray(np.transpose(t, axes))


def svd(m: np.ndarray) -> SvdResult:
    """Thin SVD with nonincreasing singular values.

    Reconstruction u @ diag(s) @ vt matches the input within 1e-5
    relative Frobenius for well-scaled inputs.
    """
    _require_2d(m, "svd")
    _require_finite(m, "svd")
    try:
        u, s, vt = np.linalg.svd(np.asarray(m, dtype=np.float64), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(f"svd did not converge: {exc}") from exc
    return SvdResult(
        u.astype(np.float32), s.astype(np.float32), vt.astype(np.float32)
    )


def qr(m: np.ndarray) -> QrResult:
    """Thin Householder QR; q has orthonormal columns."""
    _require_2d(m, "qr")
    _require_finite(m, "qr")
    q, r = np.linalg.qr(np.asarray(m, dtype=np.float64), mode="reduced")
    return QrResult(q.astype(np.float32), r.astype(np.float32))
