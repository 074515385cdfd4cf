import logging

import numpy as np
import pytest

from ttfem.amen import AmenConfig, amen_solve, residual_norm
from ttfem.errors import ShapeMismatchError, SolverError
from ttfem.tt import (
    TensorTrain,
    TruncationPolicy,
    tt_apply,
    tt_identity,
    tt_norm,
    tt_op_add,
    tt_op_compose,
    tt_op_scale,
    tt_op_to_dense,
    tt_op_transpose,
    tt_scale,
    tt_to_dense,
    tt_zero,
)


def random_tt(dims, rank, seed):
    rng = np.random.default_rng(seed)
    K = len(dims)
    cores = []
    for k in range(K):
        r0 = 1 if k == 0 else rank
        r1 = 1 if k == K - 1 else rank
        cores.append(rng.standard_normal((r0, dims[k], r1)))
    t = TensorTrain(cores)
    return tt_scale(t, 1.0 / tt_norm(t))


def random_spd_op(dims, seed):
    """G^T G + I: symmetric positive definite with moderate conditioning."""
    rng = np.random.default_rng(seed)
    K = len(dims)
    cores = []
    for k in range(K):
        r0 = 1 if k == 0 else 2
        r1 = 1 if k == K - 1 else 2
        cores.append(0.4 * rng.standard_normal((r0, dims[k], dims[k], r1)))
    from ttfem.tt import TTLinearOperator

    g = TTLinearOperator(cores)
    return tt_op_add(tt_op_compose(tt_op_transpose(g), g), tt_identity(dims))


# ---------- residual_norm ----------

def test_residual_zero_x():
    dims = (4, 4)
    A = tt_identity(dims)
    f = random_tt(dims, 2, 0)
    assert residual_norm(A, tt_zero(dims), f) == pytest.approx(1.0, rel=1e-12)


def test_residual_exact_solution():
    dims = (4, 4)
    A = tt_identity(dims)
    f = random_tt(dims, 2, 1)
    assert residual_norm(A, f, f) <= 1e-14


def test_residual_dense_oracle():
    dims = (4, 4, 4)
    A = random_spd_op(dims, 3)
    f = random_tt(dims, 2, 4)
    x_dense = np.linalg.solve(tt_op_to_dense(A), tt_to_dense(f))
    from ttfem.tt import tt_from_dense

    x = tt_from_dense(x_dense, dims)
    assert residual_norm(A, x, f) <= 1e-12


def test_residual_shape_mismatch():
    A = tt_identity((4, 4))
    f = random_tt((4, 4), 2, 5)
    with pytest.raises(ShapeMismatchError):
        residual_norm(A, random_tt((4, 4, 4), 2, 6), f)


# ---------- amen_solve basics ----------

def test_identity_system():
    dims = (2, 4, 4)
    f = random_tt(dims, 2, 7)
    x, report = amen_solve(tt_identity(dims), f)
    assert report.converged
    assert residual_norm(tt_identity(dims), x, f) <= 1e-13
    assert np.allclose(tt_to_dense(x), tt_to_dense(f), atol=1e-12)


def test_scaled_identity():
    dims = (4, 4)
    A = tt_op_scale(tt_identity(dims), 2.0)
    from ttfem.tt import tt_ones

    f = tt_ones(dims)
    x, report = amen_solve(A, f)
    assert report.converged
    assert np.allclose(tt_to_dense(x), 0.5, atol=1e-12)


def test_zero_rhs():
    dims = (4, 4, 4)
    x, report = amen_solve(tt_identity(dims), tt_zero(dims))
    assert report.converged
    assert report.sweeps_used == 0
    assert report.final_relative_residual == 0.0
    assert x.ranks == (1,) * (len(dims) + 1)
    assert tt_norm(x) == 0.0


def test_spd_system_matches_dense_solve():
    dims = (4, 4, 4)
    A = random_spd_op(dims, 11)
    f = random_tt(dims, 3, 12)
    x, report = amen_solve(A, f)
    assert report.converged
    ref = np.linalg.solve(tt_op_to_dense(A), tt_to_dense(f))
    err = np.linalg.norm(tt_to_dense(x) - ref) / np.linalg.norm(ref)
    assert err <= 100 * 1e-8


def test_given_x0_converges():
    dims = (4, 4)
    A = random_spd_op(dims, 21)
    f = random_tt(dims, 2, 22)
    x, report = amen_solve(A, f, x0=random_tt(dims, 2, 23))
    assert report.converged
    assert residual_norm(A, x, f) <= 1e-8


def test_iterative_local_solver():
    dims = (4, 4, 4)
    A = random_spd_op(dims, 31)
    f = random_tt(dims, 2, 32)
    cfg = AmenConfig(local_solver="iterative")
    x, report = amen_solve(A, f, config=cfg)
    assert report.converged
    assert residual_norm(A, x, f) <= 1e-8


# ---------- error paths ----------

def test_dimension_mismatch():
    with pytest.raises(ShapeMismatchError):
        amen_solve(tt_identity((4, 4)), random_tt((4, 4, 4), 2, 41))


def test_x0_mismatch():
    with pytest.raises(ShapeMismatchError):
        amen_solve(
            tt_identity((4, 4)),
            random_tt((4, 4), 2, 42),
            x0=random_tt((4, 4, 4), 2, 43),
        )


def test_nonsymmetric_rejected():
    from ttfem.grid import build_shift_operator

    S = build_shift_operator("i", 1, 2)
    A = tt_op_add(S, tt_op_scale(tt_identity((4, 4)), 2.0))
    with pytest.raises(SolverError, match="symmetric"):
        amen_solve(A, random_tt((4, 4), 2, 44))


def test_singular_local_system():
    dims = (4, 4)
    A = tt_op_scale(tt_identity(dims), 0.0)
    from ttfem.tt import tt_ones

    with pytest.raises(SolverError, match="core"):
        amen_solve(A, tt_ones(dims))


# ---------- report contracts ----------

def test_report_histories_consistent():
    dims = (4, 4, 4)
    A = random_spd_op(dims, 51)
    f = random_tt(dims, 2, 52)
    x, report = amen_solve(A, f)
    assert len(report.rank_profile_history) == report.sweeps_used
    assert len(report.residual_history) == report.sweeps_used
    assert report.wall_time >= 0.0
    assert report.final_relative_residual >= 0.0


def test_convergence_certificate():
    dims = (4, 4, 4)
    A = random_spd_op(dims, 61)
    f = random_tt(dims, 3, 62)
    cfg = AmenConfig(residual_tol=1e-9)
    x, report = amen_solve(A, f, config=cfg)
    assert report.converged
    # independent recomputation with a fresh rounding state
    fresh = residual_norm(A, x, f, TruncationPolicy(rel_tolerance=1e-10))
    assert fresh <= 2 * cfg.residual_tol


def test_rank_accounting():
    dims = (4, 4, 4, 4)
    A = random_spd_op(dims, 71)
    f = random_tt(dims, 3, 72)
    cfg = AmenConfig(
        rounding=TruncationPolicy(rel_tolerance=1e-10, max_rank=6),
        enrichment_rank=3,
    )
    x, report = amen_solve(A, f, config=cfg)
    cap = 6 + 3
    for ranks in report.rank_profile_history:
        assert max(ranks) <= cap


def test_soft_monotonicity(caplog):
    dims = (4, 4, 4)
    A = random_spd_op(dims, 81)
    f = random_tt(dims, 2, 82)
    with caplog.at_level(logging.WARNING, logger="ttfem.amen"):
        x, report = amen_solve(A, f)
    assert report.converged
    tail = report.residual_history[-3:]
    monotone = all(a >= b for a, b in zip(tail, tail[1:]))
    assert monotone or "not monotone" in caplog.text
