"""Black-box cross interpolation into TT format.

Builds a TT approximation of a function given only point evaluations by
alternating left-to-right and right-to-left maxvol pivot sweeps over
nested index sets.  The main consumer is the per-element reciprocal of
the Jacobian determinant, which is cheap per index but has no closed TT
form.

Evaluators may be batched (taking an (N, K) integer array and returning
N values) or scalar (taking one multi-index tuple); the batched form is
probed first and preferred.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr as scipy_qr

from .errors import ConfigError, DegenerateMeshError, EvaluationError
from .tt import TensorTrain, TruncationPolicy, tt_entry, tt_round

log = logging.getLogger(__name__)

__all__ = [
    "CrossConfig",
    "CrossReport",
    "maxvol_select",
    "cross_interpolate",
    "reciprocal_tt",
]

# rounding applied to the returned train; trims the spurious directions
# QR introduces when the function has lower rank than the pivot count
_FINAL_ROUND = TruncationPolicy(rel_tolerance=1e-14)


@dataclass(frozen=True)
class CrossConfig:
    """Knobs for cross_interpolate.

    rel_convergence_tol is the sampled relative error at which a sweep
    pair is accepted; ranks grow by rank_step after each failing pair.
    """

    initial_rank: int = 4
    max_sweeps: int = 40
    rel_convergence_tol: float = 1e-12
    validation_sample_count: int = 256
    rank_step: int = 2
    max_rank: int = 64
    maxvol_tol: float = 0.05
    seed: int = 1234

    def __post_init__(self):
        if min(self.initial_rank, self.max_sweeps, self.validation_sample_count) < 1:
            raise ConfigError("cross parameters must be positive")
        if self.rel_convergence_tol <= 0:
            raise ConfigError("rel_convergence_tol must be > 0")
        if self.rank_step < 1 or self.max_rank < self.initial_rank:
            raise ConfigError("inconsistent rank adaptation parameters")


@dataclass(frozen=True)
class CrossReport:
    converged: bool
    sweeps_used: int
    sampled_errors: tuple
    final_error: float
    ranks: tuple
    evaluations: int
    seed: int
    warning: str | None
    left_indices: tuple  # per interior bond: array of row multi-indices
    right_indices: tuple  # per interior bond: array of column multi-indices


def maxvol_select(matrix, tol=0.05, max_iters=200):
    """Rows of a tall matrix forming a quasi-dominant square submatrix.

    Returns r = matrix.shape[1] row indices such that every entry of
    matrix @ inv(matrix[rows]) is bounded by 1 + tol in magnitude.
    Rank-deficient input is detected with a pivoted QR and degrades to
    the plain pivoted row choice (logged, not raised).
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] < a.shape[1]:
        raise ValueError(f"need a tall matrix, got shape {a.shape}")
    n, r = a.shape
    if r == 0:
        return np.empty(0, dtype=np.int64)
    _, rfac, piv = scipy_qr(a.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(rfac))
    rows = [int(p) for p in piv[:r]]
    if diag[-1] <= 1e-12 * diag[0]:
        log.warning(
            "maxvol: rank-deficient input (trailing pivot %.3e vs %.3e); "
            "falling back to pivoted-QR rows",
            diag[-1],
            diag[0],
        )
        return np.array(rows, dtype=np.int64)
    for _ in range(max_iters):
        try:
            b = np.linalg.solve(a[rows].T, a.T).T
        except np.linalg.LinAlgError:
            log.warning("maxvol: singular pivot block; keeping pivoted-QR rows")
            return np.array(rows, dtype=np.int64)
        i, j = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        if abs(b[i, j]) <= 1.0 + tol:
            return np.array(rows, dtype=np.int64)
        rows[j] = int(i)
    log.warning("maxvol: dominance not reached after %d swaps", max_iters)
    return np.array(rows, dtype=np.int64)


class _Evaluator:
    """Wraps a user evaluator; batches, counts, and checks finiteness."""

    def __init__(self, f):
        self.f = f
        self.count = 0
        self.batched = None

    def __call__(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim == 1:
            idx = idx[None, :]
        if self.batched is None:
            self._probe(idx)
        if self.batched:
            vals = np.asarray(self.f(idx), dtype=float).reshape(-1)
        else:
            vals = np.array(
                [float(self.f(tuple(int(x) for x in row))) for row in idx]
            )
        return self._checked(vals, idx)

    def _probe(self, idx):
        try:
            out = np.asarray(self.f(idx), dtype=float)
            self.batched = out.shape == (len(idx),)
        except (EvaluationError, DegenerateMeshError):
            raise  # a domain error, not a calling-convention mismatch
        except Exception:
            self.batched = False

    def _checked(self, vals, idx):
        self.count += len(idx)
        if not np.isfinite(vals).all():
            bad = idx[int(np.argmin(np.isfinite(vals)))]
            raise EvaluationError(
                "evaluator returned a non-finite value at index "
                f"{tuple(int(x) for x in bad)}"
            )
        return vals


def _sample_entries(tt, idx):
    return np.array([tt_entry(tt, row) for row in idx])


def _bond_caps(dims):
    K = len(dims)
    return [
        min(int(np.prod(dims[:k])), int(np.prod(dims[k:]))) for k in range(1, K)
    ]


def _grow_right_sets(right, dims, target, caps, max_rank, rng):
    """Top up each suffix set with fresh random multi-indices (deduped)."""
    K = len(dims)
    out = []
    for k in range(1, K):
        current = right[k - 1]
        want = min(target, caps[k - 1], max_rank)
        rows = [tuple(r) for r in current]
        seen = set(rows)
        tries = 0
        while len(rows) < want and tries < 20:
            draw = rng.integers(0, np.array(dims[k:]), size=(want, K - k))
            for r in draw:
                t = tuple(int(x) for x in r)
                if t not in seen:
                    seen.add(t)
                    rows.append(t)
                    if len(rows) == want:
                        break
            tries += 1
        out.append(np.array(rows, dtype=np.int64).reshape(len(rows), K - k))
    return out


def _interp_factor(q, piv):
    """q @ inv(q[piv]) computed by a solve; rows at piv become unit rows."""
    return np.linalg.solve(q[piv].T, q.T).T


def _assemble_indices(prefixes, mode_dim, suffixes):
    """All indices prefix + m + suffix, (a, m, b) in row-major order."""
    ra, kl = prefixes.shape
    rb, kr = suffixes.shape
    a, m, b = np.meshgrid(
        np.arange(ra), np.arange(mode_dim), np.arange(rb), indexing="ij"
    )
    a, m, b = a.ravel(), m.ravel(), b.ravel()
    return np.concatenate(
        [prefixes[a], m[:, None], suffixes[b]], axis=1
    ).astype(np.int64)


def _sweep_lr(ev, dims, right, mv_tol):
    """Left-to-right half sweep: rebuild cores, select nested row sets."""
    K = len(dims)
    cores = []
    left = [np.zeros((1, 0), dtype=np.int64)]
    for k in range(K):
        prefixes = left[k]
        rk, n = len(prefixes), dims[k]
        if k < K - 1:
            cols = right[k]
            idx = _assemble_indices(prefixes, n, cols)
            mat = ev(idx).reshape(rk * n, len(cols))
            q, _ = np.linalg.qr(mat)
            piv = maxvol_select(q, mv_tol)
            core = _interp_factor(q, piv)
            cores.append(core.reshape(rk, n, core.shape[1]))
            left.append(
                np.concatenate(
                    [prefixes[piv // n], (piv % n)[:, None]], axis=1
                )
            )
        else:
            idx = _assemble_indices(prefixes, n, np.zeros((1, 0), np.int64))
            vals = ev(idx).reshape(rk, n)
            cores.append(vals.reshape(rk, n, 1))
    return cores, left


def _sweep_rl(ev, dims, left, mv_tol):
    """Right-to-left half sweep: rebuild cores, select nested column sets."""
    K = len(dims)
    cores = [None] * K
    right = [None] * (K - 1)
    suffixes = np.zeros((1, 0), dtype=np.int64)
    for k in range(K - 1, -1, -1):
        n = dims[k]
        rs = len(suffixes)
        if k > 0:
            prefixes = left[k]
            idx = _assemble_indices(prefixes, n, suffixes)
            mat = ev(idx).reshape(len(prefixes), n * rs)
            q, _ = np.linalg.qr(mat.T)
            piv = maxvol_select(q, mv_tol)
            core = _interp_factor(q, piv).T
            cores[k] = core.reshape(core.shape[0], n, rs)
            suffixes = np.concatenate(
                [(piv // rs)[:, None], suffixes[piv % rs]], axis=1
            )
            right[k - 1] = suffixes
        else:
            idx = _assemble_indices(np.zeros((1, 0), np.int64), n, suffixes)
            cores[0] = ev(idx).reshape(1, n, rs).copy()
    return cores, right


def cross_interpolate(f, mode_dims, config=None):
    """Approximate f on the full index grid by sampled cross sweeps.

    Returns (train, report).  Each pair of half sweeps re-selects nested
    pivot sets; when the sampled relative error on the seeded validation
    set stays above rel_convergence_tol, every bond's target rank grows
    by rank_step (up to max_rank) before the next pair.
    """
    config = config or CrossConfig()
    dims = tuple(int(n) for n in mode_dims)
    K = len(dims)
    ev = _Evaluator(f)
    rng = np.random.default_rng(config.seed)

    if K == 1:
        vals = ev(np.arange(dims[0])[:, None])
        tt = tt_round(TensorTrain([vals.reshape(1, dims[0], 1)]), _FINAL_ROUND)
        report = CrossReport(
            True, 0, (), 0.0, tt.ranks, ev.count, config.seed, None, (), ()
        )
        return tt, report

    val_idx = rng.integers(0, np.array(dims), size=(config.validation_sample_count, K))
    val_ref = ev(val_idx)
    val_scale = float(np.linalg.norm(val_ref))

    def sampled_error(tt):
        diff = float(np.linalg.norm(_sample_entries(tt, val_idx) - val_ref))
        return diff / val_scale if val_scale > 0 else diff

    caps = _bond_caps(dims)
    target = config.initial_rank
    right = _grow_right_sets(
        [np.zeros((0, K - k), np.int64) for k in range(1, K)],
        dims,
        target,
        caps,
        config.max_rank,
        rng,
    )

    errors = []
    best = None  # (error, train, left sets, right sets); right-to-left only,
    # so the stored pivot pair is always a consistently nested family
    fallback = None
    sweeps = 0
    while sweeps < config.max_sweeps:
        cores, left = _sweep_lr(ev, dims, right, config.maxvol_tol)
        lr_train = TensorTrain(cores)
        errors.append(sampled_error(lr_train))
        sweeps += 1
        if fallback is None:
            fallback = (errors[-1], lr_train, tuple(left[1:]), tuple(right))
        if sweeps >= config.max_sweeps:
            break
        cores, right = _sweep_rl(ev, dims, left, config.maxvol_tol)
        train = TensorTrain(cores)
        err = sampled_error(train)
        errors.append(err)
        sweeps += 1
        if best is None or err < best[0]:
            best = (err, train, tuple(left[1:]), tuple(right))
        if err <= config.rel_convergence_tol:
            break
        target = min(target + config.rank_step, config.max_rank)
        right = _grow_right_sets(right, dims, target, caps, config.max_rank, rng)

    err, train, left_sets, right_sets = best if best is not None else fallback
    converged = err <= config.rel_convergence_tol
    warning = None
    if not converged:
        warning = (
            f"no convergence after {sweeps} sweeps: sampled error "
            f"{err:.3e} > {config.rel_convergence_tol:.3e}"
        )
        log.warning("cross_interpolate: %s", warning)
    train = tt_round(train, _FINAL_ROUND)
    report = CrossReport(
        converged=converged,
        sweeps_used=sweeps,
        sampled_errors=tuple(errors),
        final_error=err,
        ranks=train.ranks,
        evaluations=ev.count,
        seed=config.seed,
        warning=warning,
        left_indices=left_sets,
        right_indices=right_sets,
    )
    return train, report


def reciprocal_tt(v_eval, mode_dims, config=None):
    """TT of index -> 1/v(index) for a strictly one-signed quantity v.

    Every sampled value (pivots and validation alike) is checked: a zero
    or a sign flip raises immediately naming the index, since either one
    signals a tangled or degenerate mesh.
    """
    base = _Evaluator(v_eval)
    sign = {"ref": 0.0}

    def recip(idx):
        arr = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        vals = base(arr)
        if (vals == 0.0).any():
            where = arr[int(np.argmax(vals == 0.0))]
            raise DegenerateMeshError(
                f"evaluator returned zero at index {tuple(int(x) for x in where)}; "
                "the mesh is degenerate there"
            )
        signs = np.sign(vals)
        if sign["ref"] == 0.0:
            sign["ref"] = signs[0]
        if (signs != sign["ref"]).any():
            where = arr[int(np.argmax(signs != sign["ref"]))]
            raise DegenerateMeshError(
                f"evaluator changes sign at index {tuple(int(x) for x in where)}; "
                "the mesh is tangled or degenerate"
            )
        return 1.0 / vals

    return cross_interpolate(recip, mode_dims, config)
