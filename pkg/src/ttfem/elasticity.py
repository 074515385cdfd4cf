"""Plane-stress elasticity assembly on quadtree-encoded grids.

The grid is the image of 2^d x 2^d equispaced parameters under a global
bilinear map of a convex quadrilateral.  At any fixed reference point
the per-element Jacobian entries (and the determinant) are affine in the
element index, so each geometric field is a rank-2 TT built from three
corner evaluations; only the reciprocal determinant requires cross
interpolation.  Local stiffness couplings between the 64 corner pairs
are generated programmatically from the constitutive form and scattered
into the global operator one pair at a time, rounding after every
accumulation.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .cross import CrossConfig, reciprocal_tt
from .errors import ConfigError, DegenerateMeshError, ShapeMismatchError
from .grid import (
    CORNERS,
    BoundarySpec,
    GridTopology,
    build_element_mask,
    build_interior_projector,
    scatter_corner_pair,
)
from .tt import (
    TensorTrain,
    TTLinearOperator,
    TruncationPolicy,
    memory_footprint,
    tt_add,
    tt_apply,
    tt_dot,
    tt_hadamard,
    tt_identity,
    tt_op_add,
    tt_op_compose,
    tt_op_round,
    tt_ones,
    tt_op_scale,
    tt_round,
    tt_scale,
)

__all__ = [
    "QuadDomain",
    "MaterialParams",
    "QuadratureRule",
    "JacobianField",
    "AssembledSystem",
    "plane_stress_lame",
    "grid_point",
    "build_jacobian_field",
    "corner_pair_block",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_rhs",
    "solver_system",
    "solve_elasticity",
    "strain_energy",
    "element_stiffness_dense",
    "element_mass_dense",
    "constant_body_load",
    "pipeline_config_hash",
]

# corner order everywhere: 00, 10, 01, 11 (matches grid.CORNERS keys)
_CORNER_KEYS = ("00", "10", "01", "11")
_CORNER_ST = np.array([[-1, -1], [1, -1], [-1, 1], [1, 1]], dtype=float)

# near-machine rounding for the exactly-affine geometry trains
_TIDY = TruncationPolicy(rel_tolerance=1e-15)
DEFAULT_ASSEMBLY_ROUND = TruncationPolicy(rel_tolerance=1e-10)

# stiffness accumulation: a single near-machine rounding of the full sum
_ACCUM_ROUND = TruncationPolicy(rel_tolerance=1e-13)


# ---------- domain / material / quadrature ----------


@dataclass(frozen=True)
class QuadDomain:
    """Convex quadrilateral, corners counterclockwise: P00, P10, P11, P01."""

    corners: tuple

    def __post_init__(self):
        arr = np.asarray(self.corners, dtype=float)
        if arr.shape != (4, 2):
            raise ConfigError(f"need four 2D corners, got shape {arr.shape}")
        crosses = []
        for k in range(4):
            e1 = arr[(k + 1) % 4] - arr[k]
            e2 = arr[(k + 2) % 4] - arr[(k + 1) % 4]
            crosses.append(e1[0] * e2[1] - e1[1] * e2[0])
        scale = float(np.abs(arr).max()) or 1.0
        if any(c <= 1e-12 * scale**2 for c in crosses):
            if all(c < 0 for c in crosses):
                raise ConfigError("corners are clockwise; list them counterclockwise")
            raise ConfigError("domain is not strictly convex")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.corners, dtype=float)

    @property
    def area(self) -> float:
        arr = self.array
        x, y = arr[:, 0], arr[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    @classmethod
    def unit_square(cls) -> "QuadDomain":
        return cls(((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))

    @classmethod
    def rectangle(cls, lx: float, ly: float) -> "QuadDomain":
        return cls(((0.0, 0.0), (lx, 0.0), (lx, ly), (0.0, ly)))


def plane_stress_lame(youngs_modulus, poisson_ratio):
    """(lambda_bar, mu) for plane stress."""
    e, nu = float(youngs_modulus), float(poisson_ratio)
    if e <= 0:
        raise ConfigError(f"Young's modulus must be positive, got {e}")
    if not -1.0 < nu < 0.5:
        raise ConfigError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    mu = e / (2.0 * (1.0 + nu))
    lam_bar = e * nu / (1.0 - nu * nu)
    return lam_bar, mu


@dataclass(frozen=True)
class MaterialParams:
    youngs_modulus: float
    poisson_ratio: float
    density: float = 0.0

    def __post_init__(self):
        plane_stress_lame(self.youngs_modulus, self.poisson_ratio)  # validates
        if self.density < 0:
            raise ConfigError(f"density must be >= 0, got {self.density}")

    @property
    def shear_modulus(self) -> float:
        return plane_stress_lame(self.youngs_modulus, self.poisson_ratio)[1]

    @property
    def plane_stress_lambda(self) -> float:
        return plane_stress_lame(self.youngs_modulus, self.poisson_ratio)[0]


@dataclass(frozen=True)
class QuadratureRule:
    """Points/weights on the [-1,1]^2 reference square; weights sum to 4."""

    points: tuple
    weights: tuple
    name: str = "custom"

    def __post_init__(self):
        if len(self.points) != len(self.weights):
            raise ConfigError("points and weights must have equal length")
        total = float(sum(self.weights))
        if abs(total - 4.0) > 1e-12:
            raise ConfigError(f"weights must sum to 4 (reference area), got {total}")

    @classmethod
    def gauss_2x2(cls) -> "QuadratureRule":
        g = 1.0 / np.sqrt(3.0)
        pts = tuple((sx * g, sy * g) for sx in (-1, 1) for sy in (-1, 1))
        return cls(points=pts, weights=(1.0,) * 4, name="gauss2x2")

    @classmethod
    def midpoint(cls) -> "QuadratureRule":
        return cls(points=((0.0, 0.0),), weights=(4.0,), name="midpoint")


# ---------- bilinear map and shape functions ----------


def _map_point(domain: QuadDomain, u: float, v: float) -> np.ndarray:
    p = domain.array
    return (
        (1 - u) * (1 - v) * p[0]
        + u * (1 - v) * p[1]
        + u * v * p[2]
        + (1 - u) * v * p[3]
    )


def grid_point(domain: QuadDomain, d: int, i: int, j: int) -> np.ndarray:
    """Coordinates of node (i, j): bilinear image of the equispaced square."""
    if d < 1:
        raise ConfigError("grid exponent d must be >= 1")
    n = 2**d
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"node ({i},{j}) out of range for d={d}")
    h = 1.0 / (n - 1)
    return _map_point(domain, i * h, j * h)


def _shape_values(xi: float, eta: float) -> np.ndarray:
    s, t = _CORNER_ST[:, 0], _CORNER_ST[:, 1]
    return 0.25 * (1 + s * xi) * (1 + t * eta)


def _shape_gradients(xi: float, eta: float) -> np.ndarray:
    """(4,2) reference gradients of the bilinear shape functions."""
    s, t = _CORNER_ST[:, 0], _CORNER_ST[:, 1]
    return np.column_stack([0.25 * s * (1 + t * eta), 0.25 * t * (1 + s * xi)])


# ---------- dense per-element kernels (shared with the classical path) ----------


def element_stiffness_dense(corners, material: MaterialParams, rule=None):
    """8x8 plane-stress stiffness of one bilinear quad.

    corners: (4,2) in the order (00, 10, 01, 11); local d.o.f. layout is
    component-major, index = component*4 + corner.
    """
    rule = rule or QuadratureRule.gauss_2x2()
    lam, mu = plane_stress_lame(material.youngs_modulus, material.poisson_ratio)
    dmat = np.array(
        [[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]]
    )
    p = np.asarray(corners, dtype=float)
    ke = np.zeros((8, 8))
    for (xi, eta), w in zip(rule.points, rule.weights):
        dn = _shape_gradients(xi, eta)
        jac = p.T @ dn
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        if det <= 0:
            raise DegenerateMeshError(f"nonpositive element Jacobian ({det})")
        grad = dn @ np.linalg.inv(jac)
        b = np.zeros((3, 8))
        b[0, 0:4] = grad[:, 0]
        b[1, 4:8] = grad[:, 1]
        b[2, 0:4] = grad[:, 1]
        b[2, 4:8] = grad[:, 0]
        ke += (w * det) * (b.T @ dmat @ b)
    return ke


def element_mass_dense(corners, rule=None):
    """8x8 consistent mass (unit density) of one bilinear quad."""
    rule = rule or QuadratureRule.gauss_2x2()
    p = np.asarray(corners, dtype=float)
    m4 = np.zeros((4, 4))
    for (xi, eta), w in zip(rule.points, rule.weights):
        dn = _shape_gradients(xi, eta)
        jac = p.T @ dn
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
        if det <= 0:
            raise DegenerateMeshError(f"nonpositive element Jacobian ({det})")
        nvals = _shape_values(xi, eta)
        m4 += (w * det) * np.outer(nvals, nvals)
    me = np.zeros((8, 8))
    me[0:4, 0:4] = m4
    me[4:8, 4:8] = m4
    return me


# ---------- affine element trains ----------


def _affine_element_tt(a: float, bi: float, cj: float, d: int) -> TensorTrain:
    """Rank-2 TT of f(i,j) = a + bi*i + cj*j on the fused element grid."""
    vals = np.zeros((d, 4))
    for k in range(d):
        w = float(1 << (d - 1 - k))
        for t in range(4):
            vals[k, t] = w * (bi * (t >> 1) + cj * (t & 1))
    if d == 1:
        return TensorTrain([(a + vals[0]).reshape(1, 4, 1)])
    cores = []
    first = np.zeros((1, 4, 2))
    first[0, :, 0] = 1.0
    first[0, :, 1] = vals[0]
    cores.append(first)
    for k in range(1, d - 1):
        mid = np.zeros((2, 4, 2))
        mid[0, :, 0] = 1.0
        mid[0, :, 1] = vals[k]
        mid[1, :, 1] = 1.0
        cores.append(mid)
    last = np.zeros((2, 4, 1))
    last[0, :, 0] = a + vals[d - 1]
    last[1, :, 0] = 1.0
    cores.append(last)
    return TensorTrain(cores)


def _affine_evaluator(coeffs, d):
    """Batched index evaluator of a + b*i + c*j over fused digits."""
    a, b, c = (float(v) for v in coeffs)
    weights = 2.0 ** np.arange(d - 1, -1, -1)

    def f(idx):
        idx = np.asarray(idx, dtype=np.int64)
        iv = ((idx >> 1) * weights).sum(axis=1)
        jv = ((idx & 1) * weights).sum(axis=1)
        return a + b * iv + c * jv

    return f


# ---------- Jacobian field ----------


@dataclass(frozen=True)
class JacobianField:
    """Per-quadrature-point element Jacobian data as element-indexed TTs.

    j_coeffs[q] is a (2,2,3) array of (value at element (0,0), slope per
    i step, slope per j step) for each Jacobian entry; det_coeffs[q] the
    same triple for the determinant.  The trains are exact affine
    reconstructions; inv_detj comes from cross interpolation.
    """

    d: int
    rule: QuadratureRule
    j11: tuple
    j12: tuple
    j21: tuple
    j22: tuple
    detj: tuple
    inv_detj: tuple
    j_coeffs: tuple
    det_coeffs: tuple
    cross_reports: tuple


def build_jacobian_field(domain, d, rule=None, cross_config=None) -> JacobianField:
    rule = rule or QuadratureRule.gauss_2x2()
    if d < 1:
        raise ConfigError("grid exponent d must be >= 1")
    cross_config = cross_config or CrossConfig()
    n = 2**d
    h = 1.0 / (n - 1)

    def elem_jacobian(ei, ej, xi, eta):
        pts = np.array(
            [
                _map_point(domain, (ei + di) * h, (ej + dj) * h)
                for di, dj in (CORNERS[k] for k in _CORNER_KEYS)
            ]
        )
        return pts.T @ _shape_gradients(xi, eta)

    extremes = sorted({(0, 0), (max(n - 2, 0), 0), (0, max(n - 2, 0)),
                       (max(n - 2, 0), max(n - 2, 0))})
    j11 = []
    j12 = []
    j21 = []
    j22 = []
    detj = []
    inv_detj = []
    jco = []
    dco = []
    reports = []
    for xi, eta in rule.points:
        base = elem_jacobian(0, 0, xi, eta)
        right = elem_jacobian(1, 0, xi, eta)
        up = elem_jacobian(0, 1, xi, eta)
        coeff = np.stack([base, right - base, up - base], axis=-1)
        dets = [float(np.linalg.det(m)) for m in (base, right, up)]
        det_triple = np.array([dets[0], dets[1] - dets[0], dets[2] - dets[0]])
        for ei, ej in extremes:
            val = det_triple[0] + ei * det_triple[1] + ej * det_triple[2]
            if val <= 0.0:
                raise DegenerateMeshError(
                    f"nonpositive Jacobian determinant {val:.3e} at element "
                    f"({ei},{ej}), reference point ({xi:.4f},{eta:.4f})"
                )
        j11.append(tt_round(_affine_element_tt(*coeff[0, 0], d), _TIDY))
        j12.append(tt_round(_affine_element_tt(*coeff[0, 1], d), _TIDY))
        j21.append(tt_round(_affine_element_tt(*coeff[1, 0], d), _TIDY))
        j22.append(tt_round(_affine_element_tt(*coeff[1, 1], d), _TIDY))
        detj.append(tt_round(_affine_element_tt(*det_triple, d), _TIDY))
        inv_tt, rep = reciprocal_tt(
            _affine_evaluator(det_triple, d), (4,) * d, cross_config
        )
        inv_detj.append(inv_tt)
        reports.append(rep)
        jco.append(coeff)
        dco.append(det_triple)
    return JacobianField(
        d=d,
        rule=rule,
        j11=tuple(j11),
        j12=tuple(j12),
        j21=tuple(j21),
        j22=tuple(j22),
        detj=tuple(detj),
        inv_detj=tuple(inv_detj),
        j_coeffs=tuple(jco),
        det_coeffs=tuple(dco),
        cross_reports=tuple(reports),
    )


# ---------- corner-pair blocks ----------


def _normalize_component(alpha) -> int:
    if alpha in (0, 1):
        return int(alpha)
    if alpha in ("x", "y"):
        return 0 if alpha == "x" else 1
    raise ValueError(f"component must be 0/1 or 'x'/'y', got {alpha!r}")


def _normalize_corner_key(c) -> str:
    if isinstance(c, str):
        if c not in CORNERS:
            raise ValueError(f"unknown corner {c!r}")
        return c
    di, dj = c
    return f"{int(di)}{int(dj)}"


def _scaled_gradient_tts(field: JacobianField, q: int, corner_key: str):
    """Both components of adj(J)^T grad(shape fn) as affine TTs.

    These are the physical gradients scaled by det J, which keeps them
    polynomial; the lone reciprocal factor is applied once per term.
    """
    idx = _CORNER_KEYS.index(corner_key)
    xi, eta = field.rule.points[q]
    g = _shape_gradients(xi, eta)[idx]
    jc = field.j_coeffs[q]
    g0 = g[0] * jc[1, 1] - g[1] * jc[1, 0]
    g1 = -g[0] * jc[0, 1] + g[1] * jc[0, 0]
    d = field.d
    return (
        _affine_element_tt(*g0, d),
        _affine_element_tt(*g1, d),
    )


def corner_pair_block(
    field: JacobianField, material: MaterialParams, c1, alpha1, c2, alpha2,
    rule=None, policy=None,
) -> TensorTrain:
    """Element-indexed TT of one corner/component stiffness coupling.

    Entry at element m: sum over quadrature of
    w * (det J)^-1 * [lam*G_a1*H_a2 + mu*(delta_a1a2 G.H + G_a2*H_a1)],
    with G, H the adjugate-scaled shape gradients of the two corners.
    Masked to valid elements and rounded per policy.
    """
    if rule is not None and rule != field.rule:
        raise ConfigError("quadrature rule must match the Jacobian field's")
    policy = policy or DEFAULT_ASSEMBLY_ROUND
    key1, key2 = _normalize_corner_key(c1), _normalize_corner_key(c2)
    a1, a2 = _normalize_component(alpha1), _normalize_component(alpha2)
    lam, mu = plane_stress_lame(material.youngs_modulus, material.poisson_ratio)
    total = None
    for q, w in enumerate(field.rule.weights):
        g = _scaled_gradient_tts(field, q, key1)
        h = _scaled_gradient_tts(field, q, key2)
        term = tt_scale(tt_hadamard(g[a1], h[a2]), lam)
        term = tt_add(term, tt_scale(tt_hadamard(g[a2], h[a1]), mu))
        if a1 == a2:
            dot = tt_add(tt_hadamard(g[0], h[0]), tt_hadamard(g[1], h[1]))
            term = tt_add(term, tt_scale(dot, mu))
        term = tt_scale(tt_hadamard(term, field.inv_detj[q]), float(w))
        total = term if total is None else tt_round(tt_add(total, term), policy)
    total = tt_hadamard(total, _element_mask(field.d))
    return tt_round(total, policy)


_MASK_CACHE = {}


def _element_mask(d: int) -> TensorTrain:
    if d not in _MASK_CACHE:
        _MASK_CACHE[d] = build_element_mask(d)
    return _MASK_CACHE[d]


# ---------- assembly ----------


@dataclass
class AssembledSystem:
    stiffness: TTLinearOperator | None
    projector: TTLinearOperator | None
    stiffness_raw: TTLinearOperator | None = None
    stiffness_bounded: TTLinearOperator | None = None  # P A_raw P, no identity
    mass: TTLinearOperator | None = None
    rhs: TensorTrain | None = None
    topology: GridTopology | None = None
    material: MaterialParams | None = None
    report: dict = dc_field(default_factory=dict)


def pipeline_config_hash(domain, material, bcs, d, rule) -> str:
    """Hash of everything that must agree between the two pipelines."""
    bcs = BoundarySpec.from_sides(bcs)
    parts = [
        repr(tuple(map(tuple, domain.array))),
        repr((material.youngs_modulus, material.poisson_ratio, material.density)),
        repr(tuple((s, getattr(bcs, s)) for s in ("left", "right", "bottom", "top"))),
        f"d={d}",
        rule.name,
        repr(tuple(tuple(p) for p in rule.points)),
        repr(tuple(rule.weights)),
    ]
    return hashlib.sha256("|".join(parts).encode()).hexdigest()


def assemble_stiffness(
    domain, material, bcs, d, rule=None, cross_config=None, policy=None,
    field: JacobianField | None = None,
) -> AssembledSystem:
    """Masked 64-pair scatter assembly plus symmetric Dirichlet projection.

    bcs may be a BoundarySpec or an iterable of Dirichlet side names.
    """
    bcs = BoundarySpec.from_sides(bcs)
    rule = rule or QuadratureRule.gauss_2x2()
    policy = policy or DEFAULT_ASSEMBLY_ROUND
    t0 = time.perf_counter()
    if field is None:
        field = build_jacobian_field(domain, d, rule, cross_config)
    # TT addition is exact (block-diagonal concatenation), while every
    # rounding pass re-orthogonalizes all cores and injects O(eps)*||A||
    # backward error that kappa(A) later amplifies in the solution.  So the
    # 64 pair terms are summed with no intermediate rounding at all (peak
    # bond ~800, which QR handles easily at mode size 4) and compressed in
    # one near-machine pass; the spectrum has a clean gap well below the
    # exact rank, so the tight tolerance discards only accumulated noise.
    a_raw = None
    for key1 in _CORNER_KEYS:
        for a1 in (0, 1):
            for key2 in _CORNER_KEYS:
                for a2 in (0, 1):
                    block = corner_pair_block(
                        field, material, key1, a1, key2, a2, policy=policy
                    )
                    op = scatter_corner_pair(block, key1, key2, a1, a2, d)
                    a_raw = op if a_raw is None else tt_op_add(a_raw, op)
    raw_round = TruncationPolicy(
        rel_tolerance=min(policy.rel_tolerance, _ACCUM_ROUND.rel_tolerance),
        max_rank=policy.max_rank,
    )
    a_raw = tt_op_round(a_raw, raw_round)
    projector = build_interior_projector(bcs, d)
    eye = tt_identity((2,) + (4,) * d)
    complement = tt_op_add(eye, tt_op_scale(projector, -1.0))
    # round between the two projector composes: their rank products are
    # what drives peak memory here (the four-side projector has rank 16)
    half = tt_op_round(tt_op_compose(projector, a_raw), policy)
    bounded = tt_op_round(tt_op_compose(half, projector), policy)
    a_bc = tt_op_round(tt_op_add(bounded, complement), policy)
    elapsed = time.perf_counter() - t0
    report = {
        "stiffness_time_s": elapsed,
        "stiffness_ranks": a_bc.ranks,
        "stiffness_raw_ranks": a_raw.ranks,
        "cross_reports": field.cross_reports,
        "config_hash": pipeline_config_hash(domain, material, bcs, d, rule),
    }
    return AssembledSystem(
        stiffness=a_bc,
        projector=projector,
        stiffness_raw=a_raw,
        stiffness_bounded=bounded,
        topology=GridTopology(d),
        material=material,
        report=report,
    )


def assemble_mass(
    domain, d, rule=None, policy=None, field: JacobianField | None = None,
) -> TTLinearOperator:
    """Component-diagonal consistent mass operator (no BC applied)."""
    rule = rule or QuadratureRule.gauss_2x2()
    policy = policy or DEFAULT_ASSEMBLY_ROUND
    if field is None:
        field = build_jacobian_field(domain, d, rule)
    mass = None
    for key1 in _CORNER_KEYS:
        i1 = _CORNER_KEYS.index(key1)
        for key2 in _CORNER_KEYS:
            i2 = _CORNER_KEYS.index(key2)
            block = None
            for q, w in enumerate(field.rule.weights):
                xi, eta = field.rule.points[q]
                nvals = _shape_values(xi, eta)
                scale = float(w * nvals[i1] * nvals[i2])
                term = tt_scale(field.detj[q], scale)
                block = term if block is None else tt_add(block, term)
            block = tt_round(tt_hadamard(block, _element_mask(field.d)), policy)
            for a in (0, 1):
                op = scatter_corner_pair(block, key1, key2, a, a, d)
                mass = op if mass is None else tt_op_round(tt_op_add(mass, op), policy)
    return mass


def assemble_rhs(mass, f_nodal, projector, policy=None) -> TensorTrain:
    """f = projector (mass f_nodal): consistent load with Dirichlet rows zeroed."""
    policy = policy or DEFAULT_ASSEMBLY_ROUND
    if mass.col_dims != f_nodal.dims:
        raise ShapeMismatchError(
            f"mass columns {mass.col_dims} do not match load dims {f_nodal.dims}"
        )
    mf = tt_apply(mass, f_nodal, policy=None)
    return tt_round(tt_apply(projector, mf, policy=None), policy)


def constant_body_load(fx: float, fy: float, d: int) -> TensorTrain:
    """Rank-1 nodal load with constant (fx, fy) everywhere."""
    head = np.array([[[float(fx)], [float(fy)]]])  # (1,2,1)
    return TensorTrain([head] + [np.ones((1, 4, 1)) for _ in range(d)])


def solver_system(system: AssembledSystem, policy=None, exact=True):
    """Numerically balanced copy of (A, f) for the iterative solver.

    The elastic block carries entries ~E while the Dirichlet identity
    rows sit at 1, which inflates the condition number by ~E and stalls
    alternating sweeps far above tolerance.  Dividing the projected
    elastic block and the load by the mean stiffness diagonal puts both
    blocks on the same scale and leaves the solution u bit-for-bit the
    same system's solution.

    With exact=True (the default) the projected system is rebuilt from
    the raw stiffness with no rounding at all: the projector is a 0/1
    diagonal, so its composes are pure selection products, and addition
    and scaling are exact core operations.  The operator rank roughly
    triples versus the rounded form, but the rounding events it avoids
    each carry an O(eps)*||A|| backward error that kappa(A) turns into
    several digits of solution error on fine grids.  exact=False keeps
    the cheaper policy-rounded operator for rank/time studies.
    """
    policy = policy or DEFAULT_ASSEMBLY_ROUND
    if exact and system.stiffness_raw is not None:
        half = tt_op_compose(system.projector, system.stiffness_raw)
        bounded = tt_op_compose(half, system.projector)
    else:
        bounded = system.stiffness_bounded
    diag = TensorTrain([np.einsum("ammb->amb", c) for c in bounded.cores])
    dims = bounded.col_dims
    scale = tt_dot(diag, tt_ones(dims)) / float(np.prod(dims))
    if scale <= 0:
        raise DegenerateMeshError(
            f"projected stiffness has nonpositive mean diagonal ({scale:.3e})"
        )
    eye = tt_identity(dims)
    complement = tt_op_add(eye, tt_op_scale(system.projector, -1.0))
    a_scaled = tt_op_add(tt_op_scale(bounded, 1.0 / scale), complement)
    if not exact:
        a_scaled = tt_op_round(a_scaled, policy)
    f_scaled = tt_scale(system.rhs, 1.0 / scale)
    return a_scaled, f_scaled, scale


def solve_elasticity(
    domain, material, bcs, d, f_nodal, rule=None, cross_config=None,
    policy=None, amen_config=None, exact=True,
):
    """Full pipeline: assemble, project, solve.  Returns (u, report dict).

    exact controls how the solver's copy of the projected system is
    built (see solver_system); it does not affect the reported operator
    ranks, which always describe the policy-rounded stiffness.
    """
    from .amen import AmenConfig, amen_solve

    rule = rule or QuadratureRule.gauss_2x2()
    policy = policy or DEFAULT_ASSEMBLY_ROUND
    amen_config = amen_config or AmenConfig()

    t0 = time.perf_counter()
    field = build_jacobian_field(domain, d, rule, cross_config)
    system = assemble_stiffness(
        domain, material, bcs, d, rule, cross_config, policy, field=field
    )
    system.mass = assemble_mass(domain, d, rule, policy, field=field)
    system.rhs = assemble_rhs(system.mass, f_nodal, system.projector, policy)
    assembly_time = time.perf_counter() - t0

    t1 = time.perf_counter()
    a_scaled, f_scaled, scale = solver_system(system, policy, exact=exact)
    u, solve_report = amen_solve(a_scaled, f_scaled, config=amen_config)
    solve_time = time.perf_counter() - t1

    # 1/2 (Pu)^T A_raw (Pu) == 1/2 u^T (P A P) u with diagonal P, but with
    # no rounding event on the operator side: u sits at the bottom of A's
    # spectrum, so an O(eps)*||A|| operator perturbation costs eps*kappa
    # relative energy error, while rounding the projected *vector* is only
    # sqrt(kappa)-amplified and stays harmless at 1e-13
    w = tt_round(tt_apply(system.projector, u, policy=None),
                 TruncationPolicy(rel_tolerance=1e-13))
    energy = strain_energy(system.stiffness_raw, w, policy=None)

    report = {
        "d": d,
        "assembly_time_s": assembly_time,
        "solve_time_s": solve_time,
        "total_time_s": assembly_time + solve_time,
        "ranks": {
            "A": system.stiffness.ranks,
            "M": system.mass.ranks,
            "f": system.rhs.ranks,
            "u": u.ranks,
        },
        "memory": {
            "A": memory_footprint(system.stiffness),
            "M": memory_footprint(system.mass),
            "f": memory_footprint(system.rhs),
            "u": memory_footprint(u),
        },
        "solver": solve_report,
        "solver_scale": scale,
        "energy_J": energy,
        "config_hash": system.report["config_hash"],
        "cross_reports": field.cross_reports,
    }
    return u, report


def strain_energy(a_op, u, policy=None) -> float:
    """1/2 u^T A u; nonnegative for SPD A."""
    if a_op.col_dims != u.dims:
        raise ShapeMismatchError(
            f"operator columns {a_op.col_dims} do not match u dims {u.dims}"
        )
    return 0.5 * tt_dot(u, tt_apply(a_op, u, policy=policy))
