"""Tensor-train (TT) vectors and linear operators over quantics grids.

A TT vector stores a tensor v(n_0, ..., n_{K-1}) as a chain of order-3 cores
G_k of shape (r_{k-1}, n_k, r_k) with boundary ranks r_{-1} = r_{K-1} = 1;
an entry is the ordered product of the selected core slices.  Operators use
order-4 cores (r_{k-1}, m_k, n_k, r_k).  Mode sizes are restricted to 2
(binary digits, leading displacement-component mode) and 4 (fused digit
pairs), which is the only layout the assembly pipeline produces.

All scalars are float64.  Dense bridges (``tt_to_dense`` and friends) are
test/debug pathways and refuse to materialize more than ``DENSE_CAP``
entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ShapeMismatchError

__all__ = [
    "DENSE_CAP",
    "TensorTrain",
    "TTLinearOperator",
    "TruncationPolicy",
    "DEFAULT_POLICY",
    "EXACT_POLICY",
    "qtt_encode",
    "qtt_decode",
    "tt_from_dense",
    "tt_to_dense",
    "tt_entry",
    "tt_add",
    "tt_sub",
    "tt_scale",
    "tt_hadamard",
    "tt_dot",
    "tt_norm",
    "tt_round",
    "tt_zero",
    "tt_ones",
    "tt_rank1",
    "tt_apply",
    "tt_op_add",
    "tt_op_compose",
    "tt_op_transpose",
    "tt_op_round",
    "tt_op_from_dense",
    "tt_op_to_dense",
    "tt_diag",
    "tt_identity",
    "memory_footprint",
    "MemoryFootprint",
]

# Hard cap for any dense materialization (entries, not bytes).
DENSE_CAP = 2**22

_ALLOWED_MODES = (2, 4)


@dataclass(frozen=True)
class TruncationPolicy:
    """Rank-truncation control for rounding calls.

    rel_tolerance is the relative Frobenius error budget of one rounding
    call (distributed over the internal per-bond truncations); max_rank
    caps every bond, None means uncapped.
    """

    rel_tolerance: float = 1e-12
    max_rank: int | None = None

    def __post_init__(self):
        if self.rel_tolerance < 0:
            raise ValueError("rel_tolerance must be >= 0")
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")


DEFAULT_POLICY = TruncationPolicy()
EXACT_POLICY = TruncationPolicy(rel_tolerance=0.0)


def _check_cores(cores, order):
    if not cores:
        raise ShapeMismatchError("a tensor train needs at least one core")
    for k, core in enumerate(cores):
        if core.ndim != order:
            raise ShapeMismatchError(
                f"core {k} has ndim {core.ndim}, expected {order}"
            )
        for n in core.shape[1:-1]:
            if n not in _ALLOWED_MODES:
                raise ShapeMismatchError(
                    f"core {k} has mode size {n}; only 2 and 4 are supported"
                )
    if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
        raise ShapeMismatchError("boundary ranks must be 1")
    for k in range(len(cores) - 1):
        if cores[k].shape[-1] != cores[k + 1].shape[0]:
            raise ShapeMismatchError(
                f"rank mismatch between cores {k} and {k + 1}: "
                f"{cores[k].shape[-1]} vs {cores[k + 1].shape[0]}"
            )


class TensorTrain:
    """Immutable TT vector; cores are (r_{k-1}, n_k, r_k) float64 arrays."""

    __slots__ = ("cores",)

    def __init__(self, cores):
        cores = [np.ascontiguousarray(c, dtype=np.float64) for c in cores]
        _check_cores(cores, order=3)
        object.__setattr__(self, "cores", tuple(cores))

    def __setattr__(self, name, value):
        raise AttributeError("TensorTrain is immutable")

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    def entry(self, multi_index) -> float:
        return tt_entry(self, multi_index)

    def norm(self) -> float:
        return tt_norm(self)

    def __repr__(self):
        return f"TensorTrain(dims={self.dims}, ranks={self.ranks})"


class TTLinearOperator:
    """Immutable TT operator; cores are (r_{k-1}, m_k, n_k, r_k) arrays."""

    __slots__ = ("cores",)

    def __init__(self, cores):
        cores = [np.ascontiguousarray(c, dtype=np.float64) for c in cores]
        _check_cores(cores, order=4)
        object.__setattr__(self, "cores", tuple(cores))

    def __setattr__(self, name, value):
        raise AttributeError("TTLinearOperator is immutable")

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def row_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[3] for c in self.cores)

    @property
    def max_rank(self) -> int:
        return max(self.ranks)

    def transpose(self) -> "TTLinearOperator":
        return tt_op_transpose(self)

    def __repr__(self):
        return (
            f"TTLinearOperator(row_dims={self.row_dims}, "
            f"col_dims={self.col_dims}, ranks={self.ranks})"
        )


# ---------- Binary index encoding ----------

def qtt_encode(linear_index: int, d: int) -> tuple[int, ...]:
    """Big-endian binary digits of linear_index: digit k has weight 2^(d-1-k)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0 <= linear_index < 2**d:
        raise ValueError(f"index {linear_index} out of range for d={d}")
    return tuple((linear_index >> (d - 1 - k)) & 1 for k in range(d))


def qtt_decode(digits) -> int:
    """Inverse of qtt_encode."""
    d = len(digits)
    out = 0
    for k, b in enumerate(digits):
        if b not in (0, 1):
            raise ValueError(f"digit {k} is {b}, not binary")
        out += b << (d - 1 - k)
    return out


# ---------- Construction helpers ----------

def tt_zero(dims) -> TensorTrain:
    """Canonical rank-1 zero vector."""
    return TensorTrain([np.zeros((1, n, 1)) for n in dims])


def tt_ones(dims) -> TensorTrain:
    return TensorTrain([np.ones((1, n, 1)) for n in dims])


def tt_rank1(factors) -> TensorTrain:
    """Rank-1 TT from per-mode factor vectors."""
    return TensorTrain(
        [np.asarray(f, dtype=np.float64).reshape(1, -1, 1) for f in factors]
    )


def _guard_dense(total: int, what: str):
    if total > DENSE_CAP:
        raise CapacityError(
            f"{what} would materialize {total} entries (cap {DENSE_CAP})"
        )


# ---------- Dense bridges ----------

def _tt_svd_cores(tensor: np.ndarray, dims, policy: TruncationPolicy):
    """Successive truncated-SVD factorization; dims may be any sizes here."""
    total = int(np.prod(dims))
    if tensor.size != total:
        raise ShapeMismatchError(
            f"value count {tensor.size} does not match mode dims {tuple(dims)}"
        )
    k_modes = len(dims)
    fro = float(np.linalg.norm(tensor.ravel()))
    delta = 0.0
    if k_modes > 1:
        delta = policy.rel_tolerance * fro / np.sqrt(k_modes - 1)
    cores = []
    rest = tensor.reshape(1, total)
    r_prev = 1
    for k in range(k_modes - 1):
        mat = rest.reshape(r_prev * dims[k], -1)
        u, s, vt = _svd(mat)
        r = _rank_for_tolerance(s, delta)
        if policy.max_rank is not None:
            r = min(r, policy.max_rank)
        cores.append(u[:, :r].reshape(r_prev, dims[k], r))
        rest = (s[:r, None] * vt[:r]).reshape(r, -1)
        r_prev = r
    cores.append(rest.reshape(r_prev, dims[-1], 1))
    return cores


def tt_from_dense(values, mode_dims, policy: TruncationPolicy = DEFAULT_POLICY) -> TensorTrain:
    """Compress a dense array into TT form (test-scale only)."""
    values = np.asarray(values, dtype=np.float64)
    _guard_dense(values.size, "tt_from_dense")
    return TensorTrain(_tt_svd_cores(values, tuple(mode_dims), policy))


def tt_to_dense(t: TensorTrain) -> np.ndarray:
    """Full contraction to a flat dense vector in C (big-endian mode) order."""
    total = int(np.prod(t.dims))
    _guard_dense(total, "tt_to_dense")
    v = t.cores[0][0]  # (n_0, r_1)
    for core in t.cores[1:]:
        v = np.tensordot(v, core, axes=([-1], [0]))
    return v.reshape(total)


def tt_entry(t: TensorTrain, multi_index) -> float:
    """Single entry in O(K r^2): ordered product of core slices."""
    if len(multi_index) != t.order:
        raise ShapeMismatchError(
            f"index length {len(multi_index)} != order {t.order}"
        )
    v = None
    for k, (core, idx) in enumerate(zip(t.cores, multi_index)):
        idx = int(idx)
        if not 0 <= idx < core.shape[1]:
            raise ValueError(f"digit {idx} out of range at mode {k}")
        v = core[:, idx, :] if v is None else v @ core[:, idx, :]
    return float(v[0, 0])


# ---------- Vector arithmetic ----------

def _require_same_dims(a: TensorTrain, b: TensorTrain):
    if a.dims != b.dims:
        raise ShapeMismatchError(f"mode dims differ: {a.dims} vs {b.dims}")


def tt_add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Entrywise sum; ranks add bond-wise (round afterwards if needed)."""
    _require_same_dims(a, b)
    if a.order == 1:
        return TensorTrain([a.cores[0] + b.cores[0]])
    cores = []
    for k in range(a.order):
        ca, cb = a.cores[k], b.cores[k]
        ra0, n, ra1 = ca.shape
        rb0, _, rb1 = cb.shape
        if k == 0:
            core = np.concatenate([ca, cb], axis=2)
        elif k == a.order - 1:
            core = np.concatenate([ca, cb], axis=0)
        else:
            core = np.zeros((ra0 + rb0, n, ra1 + rb1))
            core[:ra0, :, :ra1] = ca
            core[ra0:, :, ra1:] = cb
        cores.append(core)
    return TensorTrain(cores)


def tt_sub(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    return tt_add(a, tt_scale(b, -1.0))


def tt_scale(a: TensorTrain, c: float) -> TensorTrain:
    cores = [a.cores[0] * float(c)] + [core.copy() for core in a.cores[1:]]
    return TensorTrain(cores)


def tt_hadamard(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Entrywise product; ranks multiply bond-wise."""
    _require_same_dims(a, b)
    cores = []
    for ca, cb in zip(a.cores, b.cores):
        ra0, n, ra1 = ca.shape
        rb0, _, rb1 = cb.shape
        core = np.einsum("anb,xny->axnby", ca, cb)
        cores.append(core.reshape(ra0 * rb0, n, ra1 * rb1))
    return TensorTrain(cores)


def tt_dot(a: TensorTrain, b: TensorTrain) -> float:
    """Euclidean inner product via left-to-right contraction."""
    _require_same_dims(a, b)
    v = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        # v[p, q] carries the contraction of all previous modes
        w = np.tensordot(v, ca, axes=([0], [0]))  # (q, n, r_a)
        v = np.tensordot(w, cb, axes=([0, 1], [0, 1]))  # (r_a, r_b)
    return float(v[0, 0])


def tt_norm(a: TensorTrain) -> float:
    """Euclidean norm via an orthogonalization sweep.

    Equivalent to sqrt(tt_dot(a, a)) but accurate for difference trains
    whose norm is far below the scale of the individual cores (the raw
    Gram contraction loses half the digits to cancellation there)."""
    if a.order == 1:
        return float(np.linalg.norm(a.cores[0]))
    cores = _orthogonalize_rl(a.cores)
    return float(np.linalg.norm(cores[0]))


# ---------- Rounding ----------

def _svd(mat):
    try:
        return np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but robust
        import scipy.linalg

        return scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")


def _rank_for_tolerance(s: np.ndarray, delta: float) -> int:
    """Smallest rank whose discarded tail has Frobenius norm <= delta."""
    if s.size == 0:
        return 1
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tail[r] = ||s[r:]||
    keep = int(np.searchsorted(tail[1:][::-1], delta, side="right"))
    r = s.size - keep
    return max(r, 1)


def _orthogonalize_rl(cores):
    """Right-to-left QR sweep; afterwards cores[1:] have orthonormal rows
    when reshaped to (r_{k-1}, n_k*r_k), and the full norm sits in cores[0]."""
    cores = list(cores)
    for k in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        q, rmat = np.linalg.qr(cores[k].reshape(r0, n * r1).T)
        rank = q.shape[1]
        cores[k] = np.ascontiguousarray(q.T).reshape(rank, n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], rmat.T, axes=([2], [0]))
    return cores


def tt_round(a: TensorTrain, policy: TruncationPolicy = DEFAULT_POLICY) -> TensorTrain:
    """Re-truncate: right-to-left orthogonalization, then left-to-right
    truncated SVD with per-bond budget rel_tolerance*||a||/sqrt(K-1)."""
    if a.order == 1 or all(r == 1 for r in a.ranks):
        return TensorTrain([c.copy() for c in a.cores])
    cores = _orthogonalize_rl(a.cores)
    norm = float(np.linalg.norm(cores[0]))
    if norm == 0.0:
        return tt_zero(a.dims)
    delta = policy.rel_tolerance * norm / np.sqrt(a.order - 1)
    for k in range(a.order - 1):
        r0, n, r1 = cores[k].shape
        u, s, vt = _svd(cores[k].reshape(r0 * n, r1))
        r = _rank_for_tolerance(s, delta)
        r = min(r, a.ranks[k + 1])  # ranks never increase
        if policy.max_rank is not None:
            r = min(r, policy.max_rank)
        cores[k] = u[:, :r].reshape(r0, n, r)
        carry = s[:r, None] * vt[:r]
        cores[k + 1] = np.tensordot(carry, cores[k + 1], axes=([1], [0]))
    return TensorTrain(cores)


# ---------- Operator algebra ----------

def tt_apply(
    A: TTLinearOperator, x: TensorTrain, policy: TruncationPolicy | None = DEFAULT_POLICY
) -> TensorTrain:
    """Matrix-vector product; pass policy=None to skip the final rounding."""
    if A.col_dims != x.dims:
        raise ShapeMismatchError(
            f"operator col_dims {A.col_dims} != vector dims {x.dims}"
        )
    cores = []
    for ca, cx in zip(A.cores, x.cores):
        ra0, m, n, ra1 = ca.shape
        rx0, _, rx1 = cx.shape
        core = np.einsum("amnb,xny->axmby", ca, cx)
        cores.append(core.reshape(ra0 * rx0, m, ra1 * rx1))
    y = TensorTrain(cores)
    return y if policy is None else tt_round(y, policy)


def _require_op_same_dims(A: TTLinearOperator, B: TTLinearOperator):
    if A.row_dims != B.row_dims or A.col_dims != B.col_dims:
        raise ShapeMismatchError("operator shapes differ")


def tt_op_add(A: TTLinearOperator, B: TTLinearOperator) -> TTLinearOperator:
    _require_op_same_dims(A, B)
    if A.order == 1:
        return TTLinearOperator([A.cores[0] + B.cores[0]])
    cores = []
    for k in range(A.order):
        ca, cb = A.cores[k], B.cores[k]
        ra0, m, n, ra1 = ca.shape
        rb0, _, _, rb1 = cb.shape
        if k == 0:
            core = np.concatenate([ca, cb], axis=3)
        elif k == A.order - 1:
            core = np.concatenate([ca, cb], axis=0)
        else:
            core = np.zeros((ra0 + rb0, m, n, ra1 + rb1))
            core[:ra0, :, :, :ra1] = ca
            core[ra0:, :, :, ra1:] = cb
        cores.append(core)
    return TTLinearOperator(cores)


def tt_op_scale(A: TTLinearOperator, c: float) -> TTLinearOperator:
    cores = [A.cores[0] * float(c)] + [core.copy() for core in A.cores[1:]]
    return TTLinearOperator(cores)


def tt_op_compose(A: TTLinearOperator, B: TTLinearOperator) -> TTLinearOperator:
    """Operator product A@B (apply B first)."""
    if A.col_dims != B.row_dims:
        raise ShapeMismatchError(
            f"A col_dims {A.col_dims} != B row_dims {B.row_dims}"
        )
    cores = []
    for ca, cb in zip(A.cores, B.cores):
        ra0, m, p, ra1 = ca.shape
        rb0, _, n, rb1 = cb.shape
        core = np.einsum("ampb,xpny->axmnby", ca, cb)
        cores.append(core.reshape(ra0 * rb0, m, n, ra1 * rb1))
    return TTLinearOperator(cores)


def tt_op_transpose(A: TTLinearOperator) -> TTLinearOperator:
    return TTLinearOperator([c.transpose(0, 2, 1, 3) for c in A.cores])


def _op_as_vector(A: TTLinearOperator) -> list[np.ndarray]:
    return [c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3]) for c in A.cores]


def tt_op_round(A: TTLinearOperator, policy: TruncationPolicy = DEFAULT_POLICY) -> TTLinearOperator:
    """Round an operator by treating fused (row, col) modes as one index."""
    if A.order == 1 or all(r == 1 for r in A.ranks):
        return TTLinearOperator([c.copy() for c in A.cores])
    cores = _orthogonalize_rl(_op_as_vector(A))
    norm = float(np.linalg.norm(cores[0]))
    if norm == 0.0:
        return TTLinearOperator(
            [np.zeros((1, m, n, 1)) for m, n in zip(A.row_dims, A.col_dims)]
        )
    delta = policy.rel_tolerance * norm / np.sqrt(A.order - 1)
    for k in range(A.order - 1):
        r0, n, r1 = cores[k].shape
        u, s, vt = _svd(cores[k].reshape(r0 * n, r1))
        r = _rank_for_tolerance(s, delta)
        r = min(r, A.ranks[k + 1])
        if policy.max_rank is not None:
            r = min(r, policy.max_rank)
        cores[k] = u[:, :r].reshape(r0, n, r)
        carry = s[:r, None] * vt[:r]
        cores[k + 1] = np.tensordot(carry, cores[k + 1], axes=([1], [0]))
    out = []
    for core, m, n in zip(cores, A.row_dims, A.col_dims):
        r0, _, r1 = core.shape
        out.append(core.reshape(r0, m, n, r1))
    return TTLinearOperator(out)


def tt_op_from_dense(
    mat: np.ndarray, row_dims, col_dims, policy: TruncationPolicy = DEFAULT_POLICY
) -> TTLinearOperator:
    """Compress a dense matrix into operator TT form (test-scale only)."""
    mat = np.asarray(mat, dtype=np.float64)
    row_dims = tuple(row_dims)
    col_dims = tuple(col_dims)
    if len(row_dims) != len(col_dims):
        raise ShapeMismatchError("row_dims and col_dims must have equal length")
    nrow, ncol = int(np.prod(row_dims)), int(np.prod(col_dims))
    _guard_dense(nrow * ncol, "tt_op_from_dense")
    if mat.shape != (nrow, ncol):
        raise ShapeMismatchError(
            f"matrix shape {mat.shape} does not match dims {(nrow, ncol)}"
        )
    k_modes = len(row_dims)
    tensor = mat.reshape(row_dims + col_dims)
    perm = [axis for k in range(k_modes) for axis in (k, k_modes + k)]
    fused = tensor.transpose(perm).reshape(
        [row_dims[k] * col_dims[k] for k in range(k_modes)]
    )
    cores = _tt_svd_cores(
        fused, tuple(row_dims[k] * col_dims[k] for k in range(k_modes)), policy
    )
    out = []
    for core, m, n in zip(cores, row_dims, col_dims):
        r0 = core.shape[0]
        r1 = core.shape[2]
        out.append(core.reshape(r0, m, n, r1))
    return TTLinearOperator(out)


def tt_op_to_dense(A: TTLinearOperator) -> np.ndarray:
    """Full dense matrix of the operator (test-scale only)."""
    nrow, ncol = int(np.prod(A.row_dims)), int(np.prod(A.col_dims))
    _guard_dense(nrow * ncol, "tt_op_to_dense")
    v = A.cores[0][0]  # (m_0, n_0, r_1)
    for core in A.cores[1:]:
        v = np.tensordot(v, core, axes=([-1], [0]))
    # v has axes (m_0, n_0, m_1, n_1, ..., 1); interleave -> matrix
    v = v.reshape(v.shape[:-1])
    k_modes = A.order
    perm = list(range(0, 2 * k_modes, 2)) + list(range(1, 2 * k_modes, 2))
    return v.transpose(perm).reshape(nrow, ncol)


def tt_diag(v: TensorTrain) -> TTLinearOperator:
    """Diagonal operator with v on the diagonal."""
    cores = []
    for c in v.cores:
        r0, n, r1 = c.shape
        core = np.zeros((r0, n, n, r1))
        for i in range(n):
            core[:, i, i, :] = c[:, i, :]
        cores.append(core)
    return TTLinearOperator(cores)


def tt_identity(dims) -> TTLinearOperator:
    return TTLinearOperator([np.eye(n).reshape(1, n, n, 1) for n in dims])


# ---------- Memory accounting ----------

@dataclass(frozen=True)
class MemoryFootprint:
    tt_bytes: int
    dense_bytes: int


def memory_footprint(t: TensorTrain | TTLinearOperator) -> MemoryFootprint:
    """Exact core storage (sum of core element counts x 8) plus the
    dense-equivalent byte count of the represented object."""
    tt_bytes = sum(c.size for c in t.cores) * 8
    if isinstance(t, TTLinearOperator):
        dense = int(np.prod(t.row_dims)) * int(np.prod(t.col_dims))
    else:
        dense = int(np.prod(t.dims))
    return MemoryFootprint(tt_bytes=tt_bytes, dense_bytes=dense * 8)
