"""Tests for the plane-stress assembly pipeline.

The heavy lifting is cross-checked against small dense assemblies built
inline from the same element kernels plus an explicit scatter loop, so a
bug in the TT plumbing cannot hide behind the kernels themselves.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttfem.amen import AmenConfig
from ttfem.elasticity import (
    MaterialParams,
    QuadDomain,
    QuadratureRule,
    assemble_mass,
    assemble_rhs,
    assemble_stiffness,
    build_jacobian_field,
    constant_body_load,
    corner_pair_block,
    element_mass_dense,
    element_stiffness_dense,
    grid_point,
    pipeline_config_hash,
    plane_stress_lame,
    solve_elasticity,
    solver_system,
    strain_energy,
)
from ttfem.errors import ConfigError, DegenerateMeshError, ShapeMismatchError
from ttfem.grid import CORNERS, morton_index
from ttfem.tt import (
    tt_apply,
    tt_dot,
    tt_entry,
    tt_norm,
    tt_op_to_dense,
    tt_rank1,
    tt_sub,
    tt_to_dense,
)

ALU = MaterialParams(68e9, 0.33, 2700.0)

TRAPEZOID = QuadDomain(((0.0, 0.0), (2.0, 0.0), (1.5, 1.2), (0.2, 1.0)))


def element_corners(domain, d, i, j):
    """Corner coordinates of element (i, j) in kernel order 00,10,01,11."""
    return np.array(
        [
            grid_point(domain, d, i, j),
            grid_point(domain, d, i + 1, j),
            grid_point(domain, d, i, j + 1),
            grid_point(domain, d, i + 1, j + 1),
        ]
    )


def grid_dense(a, d):
    """Unfold a fused-digit TT into an (i, j)-indexed array."""
    flat = tt_to_dense(a)
    out = np.empty((2**d, 2**d))
    for i in range(2**d):
        for j in range(2**d):
            out[i, j] = flat[morton_index(i, j, d)]
    return out


def dense_dof_order(d):
    """Number of scalar dofs at level d (two components per node)."""
    return 2 * 4**d


def dense_free_mask(bcs, d):
    n = 2**d
    free = np.ones(dense_dof_order(d), dtype=bool)
    for a in range(2):
        for i in range(n):
            for j in range(n):
                on = (
                    ("left" in bcs and i == 0)
                    or ("right" in bcs and i == n - 1)
                    or ("bottom" in bcs and j == 0)
                    or ("top" in bcs and j == n - 1)
                )
                if on:
                    free[a * n * n + morton_index(i, j, d)] = False
    return free


def dense_assembly(domain, material, d, rule=None):
    """Scatter the element kernels into global matrices by hand."""
    n = 2**d
    nn = n * n
    K = np.zeros((2 * nn, 2 * nn))
    M = np.zeros((2 * nn, 2 * nn))
    for i in range(n - 1):
        for j in range(n - 1):
            nodes = [
                morton_index(i, j, d),
                morton_index(i + 1, j, d),
                morton_index(i, j + 1, d),
                morton_index(i + 1, j + 1, d),
            ]
            corners = element_corners(domain, d, i, j)
            ke = element_stiffness_dense(corners, material, rule)
            me = element_mass_dense(corners, rule)
            gdofs = np.array([a * nn + z for a in range(2) for z in nodes])
            K[np.ix_(gdofs, gdofs)] += ke
            M[np.ix_(gdofs, gdofs)] += me
    return K, M


# ---------------------------------------------------------------------------
# material parameters


def test_lame_nu_zero():
    lam, mu = plane_stress_lame(1.0, 0.0)
    assert lam == 0.0
    assert mu == 0.5


def test_lame_aluminium():
    lam, mu = plane_stress_lame(68e9, 0.33)
    assert np.isclose(lam, 68e9 * 0.33 / (1 - 0.33**2), rtol=1e-14)
    assert np.isclose(mu, 68e9 / (2 * 1.33), rtol=1e-14)


@given(
    st.floats(min_value=1e3, max_value=1e12),
    st.floats(min_value=-0.9, max_value=0.45),
)
def test_lame_forms_agree(youngs, nu):
    lam, mu = plane_stress_lame(youngs, nu)
    # the same moduli via the bulk-style formula
    assert np.isclose(lam, 2 * mu * nu / (1 - nu), rtol=1e-12, atol=0)
    assert np.isclose(mu, youngs / (2 * (1 + nu)), rtol=1e-12)


def test_lame_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        plane_stress_lame(-1.0, 0.3)
    with pytest.raises(ConfigError):
        plane_stress_lame(1.0, 0.5)
    with pytest.raises(ConfigError):
        plane_stress_lame(1.0, -1.0)


def test_material_properties_match_lame():
    lam, mu = plane_stress_lame(ALU.youngs_modulus, ALU.poisson_ratio)
    assert np.isclose(ALU.plane_stress_lambda, lam, rtol=1e-15)
    assert np.isclose(ALU.shear_modulus, mu, rtol=1e-15)


def test_material_rejects_negative_density():
    with pytest.raises(ConfigError):
        MaterialParams(1.0, 0.0, -1.0)


# ---------------------------------------------------------------------------
# domain and node coordinates


def test_domain_rejects_clockwise_corners():
    with pytest.raises(ConfigError):
        QuadDomain(((0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)))


def test_domain_area_rectangle():
    assert np.isclose(QuadDomain.rectangle(20.0, 1.0).area, 20.0)


def test_grid_point_unit_square():
    dom = QuadDomain.unit_square()
    d = 3
    h = 1.0 / (2**d - 1)
    for i in (0, 3, 7):
        for j in (0, 5, 7):
            assert np.allclose(grid_point(dom, d, i, j), [i * h, j * h])


def test_grid_point_trapezoid_bilinear():
    d = 2
    h = 1.0 / (2**d - 1)
    c = TRAPEZOID.array
    for i in range(4):
        for j in range(4):
            s, t = i * h, j * h
            expect = (
                (1 - s) * (1 - t) * c[0]
                + s * (1 - t) * c[1]
                + s * t * c[2]
                + (1 - s) * t * c[3]
            )
            assert np.allclose(grid_point(TRAPEZOID, d, i, j), expect)


def test_grid_point_errors():
    dom = QuadDomain.unit_square()
    with pytest.raises(ConfigError):
        grid_point(dom, 0, 0, 0)
    with pytest.raises(ValueError):
        grid_point(dom, 2, 4, 0)


# ---------------------------------------------------------------------------
# element kernels


def test_element_stiffness_symmetric_and_psd():
    rng = np.random.default_rng(7)
    for _ in range(10):
        # jittered unit square stays convex for small perturbations
        base = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        corners = base + 0.12 * rng.uniform(-1, 1, size=(4, 2))
        ke = element_stiffness_dense(corners, ALU)
        assert np.allclose(ke, ke.T, atol=1e-6 * np.abs(ke).max())
        w = np.linalg.eigvalsh(ke)
        assert w.min() >= -1e-9 * w.max()


def test_element_stiffness_translation_nullspace():
    corners = np.array([[0.0, 0.0], [1.1, 0.1], [-0.05, 0.9], [1.0, 1.2]])
    ke = element_stiffness_dense(corners, ALU)
    for a in range(2):
        u = np.zeros(8)
        u[a * 4 : a * 4 + 4] = 1.0
        assert np.abs(ke @ u).max() <= 1e-9 * np.abs(ke).max()


def test_element_stiffness_rotation_nullspace():
    corners = np.array([[0.0, 0.0], [1.1, 0.1], [-0.05, 0.9], [1.0, 1.2]])
    ke = element_stiffness_dense(corners, ALU)
    u = np.concatenate([-corners[:, 1], corners[:, 0]])
    assert np.abs(ke @ u).max() <= 1e-9 * np.abs(ke).max() * np.abs(u).max()


def test_element_mass_total_is_twice_area():
    corners = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
    me = element_mass_dense(corners)
    assert np.isclose(me.sum(), 2 * 2.0, rtol=1e-12)


def test_element_kernels_reject_degenerate_quad():
    collinear = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(DegenerateMeshError):
        element_stiffness_dense(collinear, ALU)
    with pytest.raises(DegenerateMeshError):
        element_mass_dense(collinear)


def test_quadrature_weights_cover_reference_square():
    for rule in (QuadratureRule.gauss_2x2(), QuadratureRule.midpoint()):
        assert np.isclose(sum(rule.weights), 4.0, rtol=1e-14)


# ---------------------------------------------------------------------------
# jacobian field


def test_jacobian_unit_square_constant():
    d = 2
    field = build_jacobian_field(QuadDomain.unit_square(), d)
    h = 1.0 / (2**d - 1)
    for q in range(len(field.rule.weights)):
        assert np.allclose(grid_dense(field.j11[q], d), h / 2)
        assert np.allclose(grid_dense(field.j22[q], d), h / 2)
        assert np.abs(grid_dense(field.j12[q], d)).max() < 1e-15
        assert np.abs(grid_dense(field.detj[q], d)).max() == pytest.approx(
            h * h / 4, rel=1e-12
        )


def jacobian_at(domain, d, i, j, s, t):
    """Reference-point Jacobian of element (i, j) from its corner coords."""
    c = element_corners(domain, d, i, j)
    ds = np.array([-(1 - t), (1 - t), -(1 + t), (1 + t)]) / 4.0
    dt = np.array([-(1 - s), -(1 + s), (1 - s), (1 + s)]) / 4.0
    return np.stack([ds @ c, dt @ c]).T  # row a: (d x_a/ds, d x_a/dt)


def test_jacobian_field_matches_per_element_values():
    d = 3
    field = build_jacobian_field(TRAPEZOID, d)
    n = 2**d
    for q, (s, t) in enumerate(field.rule.points):
        j11 = grid_dense(field.j11[q], d)
        j12 = grid_dense(field.j12[q], d)
        j21 = grid_dense(field.j21[q], d)
        j22 = grid_dense(field.j22[q], d)
        det = grid_dense(field.detj[q], d)
        for i in range(0, n - 1, 3):
            for j in range(0, n - 1, 3):
                jac = jacobian_at(TRAPEZOID, d, i, j, s, t)
                assert np.isclose(j11[i, j], jac[0, 0], rtol=1e-12, atol=1e-15)
                assert np.isclose(j12[i, j], jac[0, 1], rtol=1e-12, atol=1e-15)
                assert np.isclose(j21[i, j], jac[1, 0], rtol=1e-12, atol=1e-15)
                assert np.isclose(j22[i, j], jac[1, 1], rtol=1e-12, atol=1e-15)
                assert np.isclose(
                    det[i, j], np.linalg.det(jac), rtol=1e-12, atol=1e-18
                )


def test_jacobian_entries_affine_in_element_index():
    d = 4
    field = build_jacobian_field(TRAPEZOID, d)
    n = 2**d
    rng = np.random.default_rng(3)
    for q in range(4):
        g = grid_dense(field.j11[q], d)
        v00, v10, v01 = g[0, 0], g[1, 0], g[0, 1]
        for _ in range(50):
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n))
            expect = v00 + i * (v10 - v00) + j * (v01 - v00)
            assert np.isclose(g[i, j], expect, rtol=1e-12, atol=1e-15)


def test_jacobian_field_ranks_stay_small():
    field = build_jacobian_field(TRAPEZOID, 5)
    for q in range(4):
        assert max(field.j11[q].ranks) <= 2
        assert max(field.j22[q].ranks) <= 2
        assert max(field.detj[q].ranks) <= 4


def test_inverse_det_consistent_with_det():
    d = 4
    field = build_jacobian_field(TRAPEZOID, d)
    n = 2**d
    for q in range(4):
        det = grid_dense(field.detj[q], d)
        inv = grid_dense(field.inv_detj[q], d)
        prod = det * inv
        # every element participates, including the padding row/column the
        # cross interpolation extends over
        assert np.abs(prod - 1.0).max() < 1e-9


def test_jacobian_rule_recorded():
    field = build_jacobian_field(TRAPEZOID, 2)
    assert field.rule.name == "gauss2x2"
    assert len(field.cross_reports) == len(field.rule.weights)


# ---------------------------------------------------------------------------
# corner-pair blocks


def test_corner_pair_blocks_match_dense_kernel():
    d = 2
    n = 2**d
    field = build_jacobian_field(TRAPEZOID, d)
    kes = {
        (i, j): element_stiffness_dense(
            element_corners(TRAPEZOID, d, i, j), ALU
        )
        for i in range(n - 1)
        for j in range(n - 1)
    }
    scale = max(np.abs(k).max() for k in kes.values())
    corners = list(CORNERS)
    for c1 in corners:
        for c2 in corners:
            for a1 in range(2):
                for a2 in range(2):
                    block = grid_dense(
                        corner_pair_block(field, ALU, c1, a1, c2, a2), d
                    )
                    r1 = a1 * 4 + corners.index(c1)
                    r2 = a2 * 4 + corners.index(c2)
                    for i in range(n):
                        for j in range(n):
                            if i == n - 1 or j == n - 1:
                                assert abs(block[i, j]) <= 1e-10 * scale
                            else:
                                assert np.isclose(
                                    block[i, j],
                                    kes[(i, j)][r1, r2],
                                    rtol=1e-11,
                                    atol=1e-11 * scale,
                                )


def test_corner_pair_block_transpose_symmetry():
    field = build_jacobian_field(TRAPEZOID, 3)
    rng = np.random.default_rng(11)
    corners = list(CORNERS)
    for _ in range(6):
        c1, c2 = rng.choice(corners, size=2)
        a1, a2 = rng.integers(0, 2, size=2)
        b12 = corner_pair_block(field, ALU, c1, int(a1), c2, int(a2))
        b21 = corner_pair_block(field, ALU, c2, int(a2), c1, int(a1))
        diff = tt_norm(tt_sub(b12, b21))
        assert diff <= 1e-12 * max(tt_norm(b12), 1.0)


def test_corner_pair_block_rejects_mismatched_rule():
    field = build_jacobian_field(TRAPEZOID, 2)
    with pytest.raises(ConfigError):
        corner_pair_block(
            field, ALU, "00", 0, "00", 0, rule=QuadratureRule.midpoint()
        )


# ---------------------------------------------------------------------------
# assembled operators against a hand scatter


@pytest.mark.parametrize("domain", [QuadDomain.unit_square(), TRAPEZOID])
@pytest.mark.parametrize("d", [2, 3])
def test_assembly_matches_dense_scatter(domain, d):
    bcs = ("left",)
    system = assemble_stiffness(domain, ALU, bcs, d)
    mass = assemble_mass(domain, d, field=None)
    K, M = dense_assembly(domain, ALU, d)
    free = dense_free_mask(bcs, d)
    P = np.diag(free.astype(float))
    K_bc = P @ K @ P + np.diag(1.0 - free)

    a_raw = tt_op_to_dense(system.stiffness_raw)
    assert np.abs(a_raw - K).max() <= 1e-9 * np.abs(K).max()

    a_bc = tt_op_to_dense(system.stiffness)
    assert np.abs(a_bc - K_bc).max() <= 1e-9 * np.abs(K).max()

    m = tt_op_to_dense(mass)
    assert np.abs(m - M).max() <= 1e-10 * np.abs(M).max()


def test_assembled_stiffness_symmetric():
    system = assemble_stiffness(TRAPEZOID, ALU, ("left", "bottom"), 3)
    a = tt_op_to_dense(system.stiffness)
    assert np.abs(a - a.T).max() <= 1e-9 * np.abs(a).max()


def test_assembled_stiffness_positive_definite_after_bc():
    system = assemble_stiffness(TRAPEZOID, ALU, ("left",), 2)
    a = tt_op_to_dense(system.stiffness)
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    assert w.min() > 0


def test_patch_constant_strain_equilibrium():
    """A linear displacement field leaves every interior node in balance."""
    d = 3
    system = assemble_stiffness(
        TRAPEZOID, ALU, ("left", "right", "bottom", "top"), d
    )
    n = 2**d
    nn = n * n
    coords = np.array(
        [
            grid_point(TRAPEZOID, d, i, j)
            for i in range(n)
            for j in range(n)
        ]
    )
    # scatter into morton layout
    xy = np.zeros((nn, 2))
    idx = 0
    for i in range(n):
        for j in range(n):
            xy[morton_index(i, j, d)] = coords[idx]
            idx += 1
    ustar = np.concatenate(
        [0.3 + 1.7 * xy[:, 0] - 0.8 * xy[:, 1], -0.1 * xy[:, 0] + 0.9 * xy[:, 1]]
    )
    a_raw = tt_op_to_dense(system.stiffness_raw)
    proj = tt_op_to_dense(system.projector)
    resid = proj @ (a_raw @ ustar)
    assert np.abs(resid).max() <= 1e-8 * np.abs(a_raw @ ustar).max()


def test_mass_total_is_twice_domain_area():
    for domain in (QuadDomain.unit_square(), TRAPEZOID):
        mass = assemble_mass(domain, 3)
        m = tt_op_to_dense(mass)
        assert np.isclose(m.sum(), 2 * domain.area, rtol=1e-10)


def test_gravity_load_total_force():
    d = 3
    rho_g = ALU.density * 9.81
    mass = assemble_mass(TRAPEZOID, d)
    f_nodal = constant_body_load(0.0, -rho_g, d)
    nodal = tt_apply(mass, f_nodal)
    ones_y = tt_rank1([np.array([0.0, 1.0])] + [np.ones(4)] * d)
    total = tt_dot(ones_y, nodal)
    assert np.isclose(total, -rho_g * TRAPEZOID.area, rtol=1e-10)


def test_constant_body_load_entries():
    f = constant_body_load(2.5, -1.5, 3)
    assert max(f.ranks) == 1
    assert tt_entry(f, (0, 3, 1, 2)) == pytest.approx(2.5)
    assert tt_entry(f, (1, 0, 3, 3)) == pytest.approx(-1.5)


def test_rhs_respects_projection_and_shape():
    d = 2
    system = assemble_stiffness(TRAPEZOID, ALU, ("left",), d)
    mass = assemble_mass(TRAPEZOID, d)
    f_nodal = constant_body_load(0.0, -1.0, d)
    rhs = assemble_rhs(mass, f_nodal, system.projector)
    dense = tt_to_dense(rhs)
    free = dense_free_mask(("left",), d)
    assert np.abs(dense[~free]).max() <= 1e-12 * np.abs(dense).max()
    with pytest.raises(ShapeMismatchError):
        assemble_rhs(mass, constant_body_load(0.0, -1.0, d + 1), system.projector)


def test_assembly_report_contents():
    system = assemble_stiffness(TRAPEZOID, ALU, ("left",), 2)
    report = system.report
    assert report["config_hash"] == pipeline_config_hash(
        TRAPEZOID, ALU, ("left",), 2, QuadratureRule.gauss_2x2()
    )
    assert report["stiffness_time_s"] > 0
    assert max(system.stiffness.ranks) <= 80


# ---------------------------------------------------------------------------
# solver-facing system and end-to-end solve


def test_solver_system_preserves_solution():
    d = 2
    bcs = ("left",)
    system = assemble_stiffness(TRAPEZOID, ALU, bcs, d)
    mass = assemble_mass(TRAPEZOID, d)
    system.rhs = assemble_rhs(
        mass, constant_body_load(0.0, -ALU.density * 9.81, d), system.projector
    )
    a_scaled, f_scaled, scale = solver_system(system)
    assert scale > 0

    a_s = tt_op_to_dense(a_scaled)
    u = np.linalg.solve(a_s, tt_to_dense(f_scaled))

    # the scaled system must reproduce the physical solution: check the
    # original equations on the free dofs via a well-conditioned solve
    a_bc = tt_op_to_dense(system.stiffness)
    dinv = 1.0 / np.sqrt(np.diag(a_bc))
    y = np.linalg.solve(
        dinv[:, None] * a_bc * dinv[None, :], dinv * tt_to_dense(system.rhs)
    )
    u_ref = dinv * y
    free = dense_free_mask(bcs, d)
    assert np.linalg.norm((u - u_ref)[free]) <= 1e-9 * np.linalg.norm(u_ref)
    assert np.abs(u[~free]).max() <= 1e-9 * np.abs(u).max()


def test_cantilever_solve_matches_dense():
    d = 3
    dom = QuadDomain.rectangle(20.0, 1.0)
    load = (0.0, -ALU.density * 9.81)
    f_nodal = constant_body_load(*load, d)
    u, report = solve_elasticity(dom, ALU, ("left",), d, f_nodal)

    system = assemble_stiffness(dom, ALU, ("left",), d)
    mass = assemble_mass(dom, d)
    rhs = assemble_rhs(mass, f_nodal, system.projector)
    a_bc = tt_op_to_dense(system.stiffness)
    dinv = 1.0 / np.sqrt(np.diag(a_bc))
    y = np.linalg.solve(
        dinv[:, None] * a_bc * dinv[None, :], dinv * tt_to_dense(rhs)
    )
    u_ref = dinv * y

    ut = tt_to_dense(u)
    free = dense_free_mask(("left",), d)
    assert np.linalg.norm((ut - u_ref)[free]) <= 1e-6 * np.linalg.norm(u_ref)
    assert np.abs(ut[~free]).max() <= 1e-10 * np.abs(ut).max()

    # downward load bends the beam downward
    assert ut[4**d :].min() < 0

    assert report["solver"].sweeps_used >= 1
    assert report["memory"]["u"].tt_bytes < report["memory"]["u"].dense_bytes * 10


def test_solve_is_linear_in_the_load():
    d = 2
    dom = QuadDomain.rectangle(20.0, 1.0)
    cfg = AmenConfig(residual_tol=1e-10)
    u1, _ = solve_elasticity(
        dom, ALU, ("left",), d, constant_body_load(0.0, -1e4, d), amen_config=cfg
    )
    u2, _ = solve_elasticity(
        dom, ALU, ("left",), d, constant_body_load(0.0, -2e4, d), amen_config=cfg
    )
    diff = np.linalg.norm(2 * tt_to_dense(u1) - tt_to_dense(u2))
    assert diff <= 1e-7 * np.linalg.norm(tt_to_dense(u2))


def test_strain_energy_matches_work_done():
    d = 2
    dom = QuadDomain.rectangle(20.0, 1.0)
    f_nodal = constant_body_load(0.0, -ALU.density * 9.81, d)
    u, _ = solve_elasticity(
        dom, ALU, ("left",), d, f_nodal, amen_config=AmenConfig(residual_tol=1e-10)
    )
    system = assemble_stiffness(dom, ALU, ("left",), d)
    mass = assemble_mass(dom, d)
    rhs = assemble_rhs(mass, f_nodal, system.projector)
    energy = strain_energy(system.stiffness, u)
    work = 0.5 * tt_dot(rhs, u)
    assert np.isclose(energy, work, rtol=1e-8)
    assert energy > 0


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=63), st.integers(min_value=0, max_value=63))
def test_solution_entry_lookup_consistent(i, j):
    # pin one modest solve and probe entries against the dense unfold
    global _CACHED
    try:
        u_dense, u_tt, d = _CACHED
    except NameError:
        d = 3
        dom = QuadDomain.rectangle(20.0, 1.0)
        f_nodal = constant_body_load(0.0, -ALU.density * 9.81, d)
        u_tt, _ = solve_elasticity(dom, ALU, ("left",), d, f_nodal)
        u_dense = tt_to_dense(u_tt)
        _CACHED = (u_dense, u_tt, d)
    i %= 2**d
    j %= 2**d
    digits = [(2 * ((i >> (d - 1 - k)) & 1) + ((j >> (d - 1 - k)) & 1)) for k in range(d)]
    tiny = 1e-13 * np.abs(u_dense).max()
    for a in range(2):
        val = tt_entry(u_tt, (a, *digits))
        assert np.isclose(val, u_dense[a * 4**d + morton_index(i, j, d)], rtol=1e-12, atol=tiny)
