"""Exact tensor-train factorization of matrices into chains of 4-D cores.

A matrix W of shape (prod(i_factors), prod(j_factors)) is reshaped to
[i1..in, j1..jn], permuted to the interleaved order [i1, j1, i2, j2, ...],
and split left to right by full-rank SVD. Each singular value is divided
evenly between the two sides of its split (U*sqrt(s) stays in the current
core, sqrt(s)*Vt is carried forward), so no single core holds the full
dynamic range of the input. Bond dimensions follow

    d_k = min(prod_{l<=k} i_l*j_l, prod_{l>k} i_l*j_l)

and the factorization is exact up to float32 round-off.
"""

from dataclasses import dataclass
from math import prod

import numpy as np

from .errors import BondMismatch, ShapeMismatch

FACTOR_CAP = 8


@dataclass(frozen=True)
class ShapePlan:
    """How each matrix dimension splits across the chain."""

    i_factors: tuple
    j_factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "i_factors", tuple(int(f) for f in self.i_factors))
        object.__setattr__(self, "j_factors", tuple(int(f) for f in self.j_factors))
        if len(self.i_factors) != len(self.j_factors):
            raise ShapeMismatch("factor lists must have equal length")
        if len(self.i_factors) < 2:
            raise ShapeMismatch("a plan needs at least two positions")
        if any(f < 1 for f in self.i_factors + self.j_factors):
            raise ShapeMismatch("factors must be >= 1")

    @property
    def n(self) -> int:
        return len(self.i_factors)

    @property
    def rows(self) -> int:
        return prod(self.i_factors)

    @property
    def cols(self) -> int:
        return prod(self.j_factors)

    def bond_dims(self) -> tuple:
        """Expected bond dimensions d_1..d_{n-1} for a full-rank split."""
        ij = [a * b for a, b in zip(self.i_factors, self.j_factors)]
        total = prod(ij)
        dims = []
        left = 1
        for k in range(self.n - 1):
            left *= ij[k]
            dims.append(min(left, total // left))
        return tuple(dims)


def _largest_divisor_le(x: int, cap: int = FACTOR_CAP) -> int:
    for d in range(min(cap, x), 0, -1):
        if x % d == 0:
            return d
    return 1


def plan_shapes(rows: int, cols: int, n: int = 2) -> ShapePlan:
    """Split each dimension into n factors, small ones first.

    Each position before the last peels off the largest divisor <= 8 of
    what remains; the residual lands in the final position, so the last
    core carries the dominant share of the parameters. Prime dimensions
    peel 1 (or themselves when <= 8); nothing is ever padded.
    """
    if rows < 1 or cols < 1:
        raise ShapeMismatch("dimensions must be >= 1")
    if n < 2:
        raise ShapeMismatch("chain length must be >= 2")

    def peel(size):
        factors = []
        rem = size
        for _ in range(n - 1):
            d = _largest_divisor_le(rem)
            factors.append(d)
            rem //= d
        factors.append(rem)
        return tuple(factors)

    return ShapePlan(peel(rows), peel(cols))


@dataclass(frozen=True)
class MpoChain:
    """Ordered 4-D cores [d_{k-1}, i_k, j_k, d_k] with d_0 = d_n = 1."""

    local_tensors: tuple

    def __post_init__(self):
        cores = tuple(np.asarray(t, dtype=np.float32) for t in self.local_tensors)
        object.__setattr__(self, "local_tensors", cores)
        if not cores:
            raise BondMismatch("chain must contain at least one core")
        for t in cores:
            if t.ndim != 4:
                raise BondMismatch(f"cores must be 4-D, got shape {t.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
            raise BondMismatch("outer bond dimensions must be 1")
        for a, b in zip(cores, cores[1:]):
            if a.shape[3] != b.shape[0]:
                raise BondMismatch(
                    f"adjacent bonds disagree: {a.shape[3]} vs {b.shape[0]}"
                )

    @property
    def n(self) -> int:
        return len(self.local_tensors)

    @property
    def rows(self) -> int:
        return prod(t.shape[1] for t in self.local_tensors)

    @property
    def cols(self) -> int:
        return prod(t.shape[2] for t in self.local_tensors)

    @property
    def bond_dims(self) -> tuple:
        return tuple(t.shape[3] for t in self.local_tensors[:-1])

    def plan(self) -> ShapePlan:
        return ShapePlan(
            tuple(t.shape[1] for t in self.local_tensors),
            tuple(t.shape[2] for t in self.local_tensors),
        )


def _interleave(t, i_factors, j_factors):
    n = len(i_factors)
    t = t.reshape(tuple(i_factors) + tuple(j_factors))
    order = []
    for k in range(n):
        order += [k, n + k]
    return np.transpose(t, order)


def decompose(m: np.ndarray, plan: ShapePlan) -> MpoChain:
    """Full-rank tensor-train split of a matrix under the given plan."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape != (plan.rows, plan.cols):
        raise ShapeMismatch(
            f"matrix shape {m.shape} does not match plan "
            f"({plan.rows}, {plan.cols})"
        )
    n = plan.n
    carry = _interleave(
        np.asarray(m, dtype=np.float64), plan.i_factors, plan.j_factors
    )
    cores = []
    d_prev = 1
    for k in range(n):
        ik, jk = plan.i_factors[k], plan.j_factors[k]
        mat = carry.reshape(d_prev * ik * jk, -1)
        if k == n - 1:
            cores.append(mat.reshape(d_prev, ik, jk, 1))
            break
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        root = np.sqrt(s)
        cores.append((u * root).reshape(d_prev, ik, jk, len(s)))
        carry = root[:, None] * vt
        d_prev = len(s)
    return MpoChain(tuple(c.astype(np.float32) for c in cores))


def reconstruct(chain: MpoChain) -> np.ndarray:
    """Contract the chain back to its matrix (float64 accumulation)."""
    cores = [np.asarray(t, dtype=np.float64) for t in chain.local_tensors]
    cur = cores[0].reshape(-1, cores[0].shape[3])
    for t in cores[1:]:
        cur = (cur @ t.reshape(t.shape[0], -1)).reshape(-1, t.shape[3])
    i_factors = [t.shape[1] for t in cores]
    j_factors = [t.shape[2] for t in cores]
    n = len(cores)
    interleaved = []
    for a, b in zip(i_factors, j_factors):
        interleaved += [a, b]
    full = cur.reshape(interleaved)
    order = [2 * k for k in range(n)] + [2 * k + 1 for k in range(n)]
    full = np.transpose(full, order)
    return np.ascontiguousarray(
        full.reshape(prod(i_factors), prod(j_factors)).astype(np.float32)
    )


def split_large_small(chain: MpoChain):
    """Return (large, small) cores of a length-2 chain; ties pick the last."""
    if chain.n != 2:
        raise ShapeMismatch("large/small split is defined for chains of length 2")
    first, last = chain.local_tensors
    if first.size > last.size:
        return first, last
    return last, first
