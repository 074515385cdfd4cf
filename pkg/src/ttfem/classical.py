"""Sparse reference pipeline: same physics kernel, independent bookkeeping.

Assembles the plane-stress system the ordinary way (vectorized element
loop into a COO triplet list) so the compressed pipeline has something
exact to be measured against.  Degrees of freedom use the same layout as
the tensor pipeline: component-major, nodes in fused (Morton) order, so
dense comparisons need no permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.io import mmwrite

from .elasticity import (
    MaterialParams,
    QuadDomain,
    QuadratureRule,
    _shape_gradients,
    _shape_values,
    grid_point,
    pipeline_config_hash,
    plane_stress_lame,
)
from .errors import CapacityError, SolverError
from .grid import CORNERS, SIDES, BoundarySpec, morton_index

__all__ = [
    "SparseSystem",
    "classical_assemble",
    "classical_solve",
    "observables",
    "export_matrix_market",
    "analytic_tip_deflection",
    "DEFAULT_CAPACITY_D",
]

DEFAULT_CAPACITY_D = 9

_CORNER_KEYS = ("00", "10", "01", "11")


@dataclass
class SparseSystem:
    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    rhs: np.ndarray
    d: int
    dof_count: int
    coords: np.ndarray  # (node_count, 2), fused-order node index
    free_mask: np.ndarray  # 1.0 on free d.o.f., 0.0 on Dirichlet
    bcs: BoundarySpec
    config_hash: str


def _batched_kernels(corners, material, rule):
    """(E,8,8) stiffness and mass for a batch of element corner arrays.

    Same math as element_stiffness_dense / element_mass_dense, vectorized;
    equality on random elements is pinned by a test.
    """
    lam, mu = plane_stress_lame(material.youngs_modulus, material.poisson_ratio)
    dmat = np.array(
        [[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]]
    )
    ecount = corners.shape[0]
    ke = np.zeros((ecount, 8, 8))
    m4 = np.zeros((ecount, 4, 4))
    for (xi, eta), w in zip(rule.points, rule.weights):
        dn = _shape_gradients(xi, eta)
        jac = np.einsum("eca,cb->eab", corners, dn)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        if np.any(det <= 0):
            bad = int(np.argmax(det <= 0))
            raise SolverError(
                f"nonpositive element Jacobian in classical assembly "
                f"(element {bad}, det {det[bad]:.3e})"
            )
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv /= det[:, None, None]
        grad = np.einsum("cb,eba->eca", dn, inv)
        bmat = np.zeros((ecount, 3, 8))
        bmat[:, 0, 0:4] = grad[:, :, 0]
        bmat[:, 1, 4:8] = grad[:, :, 1]
        bmat[:, 2, 0:4] = grad[:, :, 1]
        bmat[:, 2, 4:8] = grad[:, :, 0]
        ke += (w * det)[:, None, None] * np.einsum(
            "eip,ij,ejq->epq", bmat, dmat, bmat
        )
        nvals = _shape_values(xi, eta)
        m4 += (w * det)[:, None, None] * np.outer(nvals, nvals)[None]
    me = np.zeros((ecount, 8, 8))
    me[:, 0:4, 0:4] = m4
    me[:, 4:8, 4:8] = m4
    return ke, me


def _dirichlet_free_mask(bcs, d):
    n = 2**d
    free = np.ones((n, n))
    if bcs.left == "dirichlet":
        free[0, :] = 0.0
    if bcs.right == "dirichlet":
        free[n - 1, :] = 0.0
    if bcs.bottom == "dirichlet":
        free[:, 0] = 0.0
    if bcs.top == "dirichlet":
        free[:, n - 1] = 0.0
    return free


def classical_assemble(
    domain, material, bcs, d, rule=None, body_force=(0.0, 0.0),
    capacity_d=DEFAULT_CAPACITY_D,
):
    """Sparse CSR system with the same quadrature/BC conventions.

    body_force is the constant nodal load density (fx, fy); the rhs is
    the consistent load P (M f) with Dirichlet rows zeroed.
    """
    if d > capacity_d:
        raise CapacityError(
            f"d={d} exceeds the classical-path capacity (d <= {capacity_d}); "
            f"that is {2 * 4**d} unknowns"
        )
    bcs = BoundarySpec.from_sides(bcs)
    rule = rule or QuadratureRule.gauss_2x2()
    n = 2**d
    ncount = n * n
    dofs_total = 2 * ncount

    # node coordinates in fused order
    zidx = np.empty((n, n), dtype=np.int64)
    coords = np.empty((ncount, 2))
    for i in range(n):
        for j in range(n):
            z = morton_index(i, j, d)
            zidx[i, j] = z
            coords[z] = grid_point(domain, d, i, j)

    ei, ej = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    ei, ej = ei.ravel(), ej.ravel()
    corner_nodes = np.stack(
        [zidx[ei + di, ej + dj] for di, dj in (CORNERS[k] for k in _CORNER_KEYS)],
        axis=1,
    )  # (E, 4)
    # Element geometry via the difference form of the bilinear map: the
    # kernels are translation invariant, so each element's corners can sit
    # relative to its own 00 corner.  Edge vectors are then products of
    # small terms instead of differences of large absolute coordinates,
    # which keeps far-field elements free of cancellation noise (that
    # noise is what limits agreement with the tensor-train assembly on
    # fine, ill-conditioned grids).
    p = domain.array
    h = 1.0 / (n - 1)
    du = p[1] - p[0]
    dv = p[3] - p[0]
    dw = (p[0] - p[1]) + (p[2] - p[3])
    ui = (ei * h)[:, None]
    vj = (ej * h)[:, None]
    corners = np.zeros((ei.size, 4, 2))
    corners[:, 1] = h * (du + vj * dw)
    corners[:, 2] = h * (dv + ui * dw)
    corners[:, 3] = h * (du + dv + (ui + vj + h) * dw)
    ke, me = _batched_kernels(corners, material, rule)

    # global d.o.f. per local slot: component-major layout
    gdofs = np.concatenate([corner_nodes, ncount + corner_nodes], axis=1)  # (E,8)
    rows = np.repeat(gdofs, 8, axis=1).ravel()
    cols = np.tile(gdofs, (1, 8)).ravel()
    stiff = sp.coo_matrix(
        (ke.ravel(), (rows, cols)), shape=(dofs_total, dofs_total)
    ).tocsr()
    mass = sp.coo_matrix(
        (me.ravel(), (rows, cols)), shape=(dofs_total, dofs_total)
    ).tocsr()

    free = np.empty(dofs_total)
    fm = _dirichlet_free_mask(bcs, d)
    for i in range(n):
        for j in range(n):
            free[zidx[i, j]] = fm[i, j]
            free[ncount + zidx[i, j]] = fm[i, j]

    free = free.astype(bool)
    proj = sp.diags(free.astype(float))
    stiff_bc = (proj @ stiff @ proj + sp.diags(1.0 - free)).tocsr()

    fx, fy = body_force
    f_nodal = np.concatenate([np.full(ncount, fx), np.full(ncount, fy)])
    rhs = proj @ (mass @ f_nodal)

    return SparseSystem(
        stiffness=stiff_bc,
        mass=mass,
        rhs=rhs,
        d=d,
        dof_count=dofs_total,
        coords=coords,
        free_mask=free,
        bcs=bcs,
        config_hash=pipeline_config_hash(domain, material, bcs, d, rule),
    )


def classical_solve(system: SparseSystem, method="auto", cg_tol=1e-10):
    """Solve the sparse system; direct for small sizes, CG above.

    The system is symmetrically Jacobi-scaled first: with stiffness
    entries ~E and unit Dirichlet rows the raw matrix is so badly scaled
    that even a direct solve loses half its digits.
    """
    a = system.stiffness
    dinv = 1.0 / np.sqrt(a.diagonal())
    if not np.all(np.isfinite(dinv)):
        raise SolverError("stiffness diagonal is not strictly positive")
    dscale = sp.diags(dinv)
    a_s = (dscale @ a @ dscale).tocsc()
    b_s = dinv * system.rhs

    if method == "auto":
        method = "direct" if system.dof_count <= 150_000 else "cg"
    if method == "direct":
        y = spla.splu(a_s).solve(b_s)
    elif method == "cg":
        precond = spla.LinearOperator(
            a_s.shape, matvec=lambda v: v / a_s.diagonal()
        )
        y, info = spla.cg(a_s, b_s, rtol=cg_tol, atol=0.0, maxiter=20000, M=precond)
        if info != 0:
            raise SolverError(f"classical CG did not converge (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")

    nb = np.linalg.norm(b_s)
    if nb > 0:
        rel = np.linalg.norm(a_s @ y - b_s) / nb
        # attainable residual floors at eps * ||A||*||y|| / ||b||; flag only
        # results clearly above that
        floor = np.finfo(float).eps * np.linalg.norm(abs(a_s) @ np.abs(y)) / nb
        if rel > max(100 * cg_tol, 30 * floor):
            raise SolverError(f"classical solve residual too large: {rel:.3e}")
    return dinv * y


def observables(system: SparseSystem, u: np.ndarray):
    """(max |u_y| over the free-end node column, strain energy 0.5 u^T A u).

    The free end is the side opposite the first Dirichlet side.
    """
    n = 2**system.d
    ncount = n * n
    dirichlet = system.bcs.dirichlet_sides()
    opposite = {"left": "right", "right": "left", "bottom": "top", "top": "bottom"}
    side = opposite[dirichlet[0]]
    if side == "left":
        nodes = [(0, j) for j in range(n)]
    elif side == "right":
        nodes = [(n - 1, j) for j in range(n)]
    elif side == "bottom":
        nodes = [(i, 0) for i in range(n)]
    else:
        nodes = [(i, n - 1) for i in range(n)]
    tip = max(
        abs(u[ncount + morton_index(i, j, system.d)]) for i, j in nodes
    )
    energy = 0.5 * float(u @ (system.stiffness @ u))
    return tip, energy


def export_matrix_market(system: SparseSystem, path):
    """Write the stiffness to <path> and the rhs to <path>.rhs.mtx."""
    path = str(path)
    mmwrite(path, system.stiffness)
    mmwrite(path + ".rhs", system.rhs.reshape(-1, 1))


def analytic_tip_deflection(material: MaterialParams, lx, ly, gravity=9.81):
    """Euler-Bernoulli tip deflection of a gravity-loaded cantilever:
    3 rho g Lx^4 / (2 E Ly^2)."""
    return (
        3.0
        * material.density
        * gravity
        * lx**4
        / (2.0 * material.youngs_modulus * ly**2)
    )
