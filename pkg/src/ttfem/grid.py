"""QTT index machinery for the 2^d x 2^d tensor-product grid.

Axis indices are interleaved digit-wise: core k of a grid-indexed TT
carries the fused digit t_k = 2*i_k + j_k (i-major), with digit 0 the most
significant.  Node (i, j) and element (i, j) share the same fused index;
element-indexed TTs live on the full 2^d x 2^d square and the invalid last
row/column is zeroed by the element mask.  Degree-of-freedom objects carry
a leading component mode of size 2 in front of the d fused modes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatchError
from .tt import (
    TensorTrain,
    TTLinearOperator,
    tt_hadamard,
    tt_op_compose,
    tt_op_transpose,
    tt_diag,
)

__all__ = [
    "GridTopology",
    "BoundarySpec",
    "DIRICHLET",
    "NEUMANN",
    "SIDES",
    "interleave",
    "deinterleave",
    "morton_index",
    "build_meshgrid_X",
    "build_meshgrid_Y",
    "build_shift_operator",
    "build_element_mask",
    "build_interior_projector",
    "scatter_corner_pair",
    "CORNERS",
]

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
SIDES = ("left", "right", "bottom", "top")

# corner offsets (di, dj) of a quadrilateral element, keyed by digit pair
CORNERS = {"00": (0, 0), "10": (1, 0), "01": (0, 1), "11": (1, 1)}


@dataclass(frozen=True)
class GridTopology:
    """Derived counts for grid exponent d (2^d points per axis)."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("grid exponent d must be >= 1")

    @property
    def points_per_axis(self) -> int:
        return 2**self.d

    @property
    def points_total(self) -> int:
        return 4**self.d

    @property
    def elements_per_axis(self) -> int:
        return 2**self.d - 1

    @property
    def dof_total(self) -> int:
        return 2 * 4**self.d


@dataclass(frozen=True)
class BoundarySpec:
    """Per-side condition; homogeneous Dirichlet or traction-free Neumann."""

    left: str = NEUMANN
    right: str = NEUMANN
    bottom: str = NEUMANN
    top: str = NEUMANN

    def __post_init__(self):
        for side in SIDES:
            value = getattr(self, side)
            if value not in (DIRICHLET, NEUMANN):
                raise ConfigError(f"side {side!r}: unknown condition {value!r}")
        if not self.dirichlet_sides():
            raise ConfigError(
                "at least one side must be Dirichlet, otherwise the "
                "stiffness operator is singular"
            )

    def dirichlet_sides(self) -> tuple[str, ...]:
        return tuple(s for s in SIDES if getattr(self, s) == DIRICHLET)

    @classmethod
    def from_sides(cls, sides) -> "BoundarySpec":
        """Build a spec from an iterable of Dirichlet side names."""
        if isinstance(sides, cls):
            return sides
        names = tuple(sides)
        for name in names:
            if name not in SIDES:
                raise ConfigError(f"unknown boundary side {name!r}")
        return cls(**{s: DIRICHLET for s in names})


def _check_axis_index(value: int, d: int, name: str):
    if not 0 <= value < 2**d:
        raise ValueError(f"{name}={value} out of range for d={d}")


def interleave(i: int, j: int, d: int) -> tuple[int, ...]:
    """Fused digits (2*i_k + j_k) for k = 0..d-1, most significant first."""
    _check_axis_index(i, d, "i")
    _check_axis_index(j, d, "j")
    return tuple(
        2 * ((i >> (d - 1 - k)) & 1) + ((j >> (d - 1 - k)) & 1) for k in range(d)
    )


def deinterleave(digits) -> tuple[int, int]:
    """Inverse of interleave."""
    i = j = 0
    d = len(digits)
    for k, t in enumerate(digits):
        if t not in (0, 1, 2, 3):
            raise ValueError(f"fused digit {t} out of range")
        i += (t >> 1) << (d - 1 - k)
        j += (t & 1) << (d - 1 - k)
    return i, j


def morton_index(i: int, j: int, d: int) -> int:
    """Linear position of node (i, j) in the fused big-endian ordering."""
    out = 0
    for t in interleave(i, j, d):
        out = 4 * out + t
    return out


def _digit_of(t: int, axis: str) -> int:
    return t >> 1 if axis == "i" else t & 1


def _counting_tt(d: int, axis: str) -> TensorTrain:
    """Rank-2 TT of f(i,j) = i (axis 'i') or j (axis 'j')."""
    values = np.zeros((d, 4))
    for k in range(d):
        weight = float(1 << (d - 1 - k))
        for t in range(4):
            values[k, t] = weight * _digit_of(t, axis)
    if d == 1:
        return TensorTrain([values[0].reshape(1, 4, 1)])
    cores = []
    first = np.zeros((1, 4, 2))
    first[0, :, 0] = 1.0
    first[0, :, 1] = values[0]
    cores.append(first)
    for k in range(1, d - 1):
        mid = np.zeros((2, 4, 2))
        mid[0, :, 0] = 1.0
        mid[0, :, 1] = values[k]
        mid[1, :, 1] = 1.0
        cores.append(mid)
    last = np.zeros((2, 4, 1))
    last[0, :, 0] = values[d - 1]
    last[1, :, 0] = 1.0
    cores.append(last)
    return TensorTrain(cores)


def build_meshgrid_X(d: int) -> TensorTrain:
    """TT with entry i at interleave(i, j); ranks <= 2."""
    return _counting_tt(d, "i")


def build_meshgrid_Y(d: int) -> TensorTrain:
    """TT with entry j at interleave(i, j); ranks <= 2."""
    return _counting_tt(d, "j")


def _fused_digit_matrix(axis_mat: np.ndarray, axis: str) -> np.ndarray:
    """Lift a 2x2 single-digit matrix to the fused 4x4 digit (identity on
    the other axis); fused index is 2*i_k + j_k."""
    eye = np.eye(2)
    if axis == "i":
        return np.kron(axis_mat, eye)
    return np.kron(eye, axis_mat)


def build_shift_operator(axis: str, offset: int, d: int) -> TTLinearOperator:
    """Operator with (S v)(n) = v(n - offset along axis), zero fill, no
    wraparound; ranks <= 2."""
    if axis not in ("i", "j"):
        raise ValueError(f"axis must be 'i' or 'j', got {axis!r}")
    if offset not in (0, 1):
        raise ValueError(f"offset must be 0 or +1, got {offset}")
    if d < 1:
        raise ValueError("d must be >= 1")
    if offset == 0:
        return TTLinearOperator([np.eye(4).reshape(1, 4, 4, 1)] * d)
    # adding 1 to the axis index: one digit flips 0 -> 1 at the carry stop,
    # all less significant digits flip 1 -> 0
    flip_up = _fused_digit_matrix(np.array([[0.0, 0.0], [1.0, 0.0]]), axis)
    flip_down = _fused_digit_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]), axis)
    same = _fused_digit_matrix(np.eye(2), axis)
    if d == 1:
        return TTLinearOperator([flip_up.reshape(1, 4, 4, 1)])
    cores = []
    first = np.zeros((1, 4, 4, 2))
    first[0, :, :, 0] = same
    first[0, :, :, 1] = flip_up
    cores.append(first)
    for _ in range(1, d - 1):
        mid = np.zeros((2, 4, 4, 2))
        mid[0, :, :, 0] = same
        mid[0, :, :, 1] = flip_up
        mid[1, :, :, 1] = flip_down
        cores.append(mid)
    last = np.zeros((2, 4, 4, 1))
    last[0, :, :, 0] = flip_up
    last[1, :, :, 0] = flip_down
    cores.append(last)
    return TTLinearOperator(cores)


def _axis_indicator_tt(d: int, axis: str, digit_value: int) -> TensorTrain:
    """Rank-1 indicator of i == 0 / i == 2^d - 1 (per digit_value) on one axis."""
    core = np.zeros((1, 4, 1))
    for t in range(4):
        core[0, t, 0] = 1.0 if _digit_of(t, axis) == digit_value else 0.0
    return TensorTrain([core.copy() for _ in range(d)])


def _axis_step_tt(d: int, axis: str) -> TensorTrain:
    """Rank-2 TT of the one-axis step [index <= 2^d - 2] = 1 - [index = 2^d - 1]."""
    ind = np.zeros(4)
    for t in range(4):
        ind[t] = 1.0 if _digit_of(t, axis) == 1 else 0.0
    if d == 1:
        core = (1.0 - ind).reshape(1, 4, 1)
        return TensorTrain([core])
    cores = []
    first = np.zeros((1, 4, 2))
    first[0, :, 0] = 1.0
    first[0, :, 1] = -ind
    cores.append(first)
    for _ in range(1, d - 1):
        mid = np.zeros((2, 4, 2))
        mid[0, :, 0] = 1.0
        mid[1, :, 1] = ind
        cores.append(mid)
    last = np.zeros((2, 4, 1))
    last[0, :, 0] = 1.0
    last[1, :, 0] = ind
    cores.append(last)
    return TensorTrain(cores)


def build_element_mask(d: int) -> TensorTrain:
    """Indicator of valid elements: 1 where i <= 2^d - 2 and j <= 2^d - 2.

    Product of two one-axis steps; on the interleaved digit layout the
    exact TT rank of the product is 4 (the axis factors share every core,
    so their rank-2 structures multiply rather than concatenate).  The
    Kronecker ranks of the hadamard product are already minimal, so no
    rounding is applied and the entries stay exactly 0/1."""
    return tt_hadamard(_axis_step_tt(d, "i"), _axis_step_tt(d, "j"))


def _interior_indicator(bcs: BoundarySpec, d: int) -> TensorTrain:
    """0/1 node vector: 0 on every Dirichlet side, 1 elsewhere."""
    edge = {
        "left": ("i", 0),
        "right": ("i", 1),
        "bottom": ("j", 0),
        "top": ("j", 1),
    }
    ones = TensorTrain([np.ones((1, 4, 1)) for _ in range(d)])
    result = ones
    for side in bcs.dirichlet_sides():
        axis, digit_value = edge[side]
        ind = _axis_indicator_tt(d, axis, digit_value)
        # result <- result * (1 - ind)
        step_cores = []
        if d == 1:
            core = np.ones((1, 4, 1)) - ind.cores[0]
            step = TensorTrain([core])
        else:
            first = np.zeros((1, 4, 2))
            first[0, :, 0] = 1.0
            first[0, :, 1] = -ind.cores[0][0, :, 0]
            step_cores.append(first)
            for k in range(1, d - 1):
                mid = np.zeros((2, 4, 2))
                mid[0, :, 0] = 1.0
                mid[1, :, 1] = ind.cores[k][0, :, 0]
                step_cores.append(mid)
            last = np.zeros((2, 4, 1))
            last[0, :, 0] = 1.0
            last[1, :, 0] = ind.cores[d - 1][0, :, 0]
            step_cores.append(last)
            step = TensorTrain(step_cores)
        # plain hadamard keeps the 0/1 entries exact; ranks multiply by 2
        # per Dirichlet side, which stays tiny (<= 16 for all four sides)
        result = tt_hadamard(result, step)
    return result


def build_interior_projector(bcs: BoundarySpec, d: int) -> TTLinearOperator:
    """Diagonal projector on d.o.f. space (leading component mode of 2):
    diagonal 0 for both components of every Dirichlet-side node, 1 else."""
    indicator = _interior_indicator(bcs, d)
    leading = np.eye(2).reshape(1, 2, 2, 1)
    return TTLinearOperator([leading, *tt_diag(indicator).cores])


def _normalize_corner(c) -> tuple[int, int]:
    if isinstance(c, str):
        if c not in CORNERS:
            raise ValueError(f"unknown corner {c!r}")
        return CORNERS[c]
    di, dj = c
    if di not in (0, 1) or dj not in (0, 1):
        raise ValueError(f"corner offsets must be 0/1, got {c!r}")
    return int(di), int(dj)


def _normalize_component(alpha) -> int:
    if alpha in (0, 1):
        return int(alpha)
    if alpha in ("x", "y"):
        return 0 if alpha == "x" else 1
    raise ValueError(f"component must be 0/1 or 'x'/'y', got {alpha!r}")


def _shift_vector(a: TensorTrain, axis: str, d: int) -> TensorTrain:
    """Apply the +1 axis shift to a vector without rounding (ranks x2)."""
    op = build_shift_operator(axis, 1, d)
    cores = []
    for ca, cx in zip(op.cores, a.cores):
        ra0, m, n, ra1 = ca.shape
        rx0, _, rx1 = cx.shape
        core = np.einsum("amnb,xny->axmby", ca, cx)
        cores.append(core.reshape(ra0 * rx0, m, ra1 * rx1))
    return TensorTrain(cores)


def scatter_corner_pair(
    a: TensorTrain, c1, c2, alpha1, alpha2, d: int
) -> TTLinearOperator:
    """Element values -> global operator block for one corner/component pair.

    Entry at row (alpha1, n1), col (alpha2, n2) is the sum over elements m
    of a(m) [n1 = m + c1] [n2 = m + c2].  Realized as T_{c1} diag(a) T_{c2}^T
    with at most one shift per axis per side; the shift common to both
    corners is folded into a first so the representation ranks stay within
    4x ranks(a).
    """
    if a.dims != (4,) * d:
        raise ShapeMismatchError(
            f"element TT must have dims {(4,) * d}, got {a.dims}"
        )
    d1 = _normalize_corner(c1)
    d2 = _normalize_corner(c2)
    a1 = _normalize_component(alpha1)
    a2 = _normalize_component(alpha2)

    common = (min(d1[0], d2[0]), min(d1[1], d2[1]))
    shifted = a
    for axis, flag in zip("ij", common):
        if flag:
            shifted = _shift_vector(shifted, axis, d)
    block = tt_diag(shifted)
    rest1 = (d1[0] - common[0], d1[1] - common[1])
    rest2 = (d2[0] - common[0], d2[1] - common[1])
    for axis, flag in zip("ij", rest1):
        if flag:
            block = tt_op_compose(build_shift_operator(axis, 1, d), block)
    for axis, flag in zip("ij", rest2):
        if flag:
            block = tt_op_compose(
                block, tt_op_transpose(build_shift_operator(axis, 1, d))
            )
    component = np.zeros((1, 2, 2, 1))
    component[0, a1, a2, 0] = 1.0
    return TTLinearOperator([component, *block.cores])
