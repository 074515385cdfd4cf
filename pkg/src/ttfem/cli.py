"""Command-line front end: presets, solver selection, metrics, campaigns.

Subcommands
-----------
solve     one problem, one (or both) solvers, JSON/CSV metrics report
validate  oracle-equivalence suite with a pass/fail table
bench     scaling campaign over a range of grid exponents, CSV output
export    convert a saved QTT1 container to JSON cores or a dense vector

Exit codes: 0 success, 2 validation/solver failure, 3 capacity exceeded,
4 configuration or file-format error.

The body force defaults to self-weight (0, -rho*g) with g = 9.81 m/s^2;
both the constant and the full force vector are configurable.
"""

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .amen import AmenConfig
from .classical import (
    DEFAULT_CAPACITY_D,
    analytic_tip_deflection,
    classical_assemble,
    classical_solve,
    observables,
)
from .elasticity import (
    MaterialParams,
    QuadDomain,
    QuadratureRule,
    constant_body_load,
    solve_elasticity,
)
from .errors import CapacityError, ConfigError, FormatError, SolverError
from .grid import SIDES, interleave
from .serialize import load_tt, save_tt, tt_to_json_dict
from .tt import (
    DENSE_CAP,
    TensorTrain,
    TruncationPolicy,
    tt_entry,
    tt_to_dense,
)

__all__ = ["RunConfig", "main", "build_report", "run_validation"]

GRAVITY = 9.81
SCHEMA_VERSION = 1

# side opposite the clamped one: where a cantilever's tip lives
_OPPOSITE = {"left": "right", "right": "left", "bottom": "top", "top": "bottom"}

BEAM_CORNERS = ((0.0, 0.0), (20.0, 0.0), (20.0, 1.0), (0.0, 1.0))

PRESETS = {
    "beam": {
        "domain": BEAM_CORNERS,
        "youngs_modulus": 68.0e9,
        "poisson_ratio": 0.33,
        "density": 2700.0,
        "bcs": {"left": "dirichlet"},
        "body_force": "gravity",
    },
}

CSV_COLUMNS = [
    "schema_version", "d", "dof", "solver", "repeat", "status", "error",
    "assembly_time_s", "solve_time_s", "total_time_s",
    "assembly_time_min_s", "assembly_time_median_s",
    "solve_time_min_s", "solve_time_median_s",
    "total_time_min_s", "total_time_median_s",
    "tt_memory_bytes_A", "tt_memory_bytes_M",
    "tt_memory_bytes_f", "tt_memory_bytes_u",
    "dense_equivalent_bytes", "classical_nnz",
    "classical_assembly_time_s", "classical_solve_time_s",
    "classical_total_time_s",
    "rank_profile_A", "rank_profile_M", "rank_profile_f", "rank_profile_u",
    "final_residual", "converged", "sweeps",
    "max_displacement_m", "strain_energy_J",
    "analytic_displacement_m", "relative_error_vs_analytic",
    "cross_solver_rel_l2", "seed", "config",
]


@dataclass
class RunConfig:
    """One validated problem description; everything the pipelines need."""

    d: int = 4
    domain: tuple = BEAM_CORNERS
    youngs_modulus: float = 68.0e9
    poisson_ratio: float = 0.33
    density: float = 2700.0
    bcs: dict = field(default_factory=lambda: {"left": "dirichlet"})
    body_force: object = "gravity"  # (fx, fy) N/m^3 or the string "gravity"
    gravity: float = GRAVITY
    solver: str = "tt"
    tol: float = 1e-8
    max_rank: int = 80
    quadrature: str = "gauss"
    seed: int = 2024
    save_u: str = None
    # exact_solver=True hands the solver an unrounded copy of the projected
    # operator (higher rank, several times slower, but free of the rounding
    # noise that conditioning amplifies); bench campaigns switch it off
    # since rank/time trends don't need the last two digits
    exact_solver: bool = True

    def validate(self):
        if not (1 <= int(self.d) <= 40):
            raise ConfigError(f"d: grid exponent {self.d} outside [1, 40]")
        if len(self.domain) != 4 or any(len(p) != 2 for p in self.domain):
            raise ConfigError("domain: need exactly four x,y corner pairs")
        if not self.youngs_modulus > 0:
            raise ConfigError(f"youngs: modulus must be positive, got {self.youngs_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ConfigError(f"poisson: ratio {self.poisson_ratio} outside (-1, 0.5)")
        if not self.density > 0:
            raise ConfigError(f"density: must be positive, got {self.density}")
        for side, kind in self.bcs.items():
            if side not in SIDES:
                raise ConfigError(f"bc: unknown side {side!r}")
            if kind not in ("dirichlet", "neumann"):
                raise ConfigError(f"bc: unknown condition {kind!r} on {side}")
        if not self.dirichlet_sides():
            raise ConfigError("bc: at least one dirichlet side is required")
        if self.body_force != "gravity":
            try:
                fx, fy = (float(v) for v in self.body_force)
            except (TypeError, ValueError):
                raise ConfigError(f"body-force: expected fx,fy or 'gravity', got {self.body_force!r}")
            self.body_force = (fx, fy)
        if self.solver not in ("tt", "classical", "both"):
            raise ConfigError(f"solver: unknown choice {self.solver!r}")
        if not 0 < self.tol < 1:
            raise ConfigError(f"tol: {self.tol} outside (0, 1)")
        if not 1 <= int(self.max_rank) <= 4096:
            raise ConfigError(f"max-rank: {self.max_rank} outside [1, 4096]")
        if self.quadrature not in ("gauss", "midpoint"):
            raise ConfigError(f"quadrature: unknown rule {self.quadrature!r}")
        self.exact_solver = bool(self.exact_solver)
        return self

    def dirichlet_sides(self):
        return tuple(s for s in SIDES if self.bcs.get(s) == "dirichlet")

    def material(self):
        return MaterialParams(self.youngs_modulus, self.poisson_ratio, self.density)

    def quad_domain(self):
        return QuadDomain(tuple(tuple(p) for p in self.domain))

    def rule(self):
        if self.quadrature == "midpoint":
            return QuadratureRule.midpoint()
        return QuadratureRule.gauss_2x2()

    def force_vector(self):
        if self.body_force == "gravity":
            return (0.0, -self.density * self.gravity)
        return tuple(self.body_force)

    def amen_config(self):
        return AmenConfig(
            residual_tol=self.tol,
            rounding=TruncationPolicy(rel_tolerance=1e-10, max_rank=self.max_rank),
            seed=self.seed,
        )

    def echo(self):
        out = asdict(self)
        out["domain"] = [list(p) for p in self.domain]
        out["body_force"] = (
            "gravity" if self.body_force == "gravity" else list(self.body_force)
        )
        return out


# ---------- post-processing helpers ----------


def dof_multi_index(component, i, j, d):
    """TT multi-index of scalar dof (component, node i, node j)."""
    return (component,) + interleave(i, j, d)


def _side_nodes(side, n):
    if side == "left":
        return [(0, j) for j in range(n)]
    if side == "right":
        return [(n - 1, j) for j in range(n)]
    if side == "bottom":
        return [(i, 0) for i in range(n)]
    return [(i, n - 1) for i in range(n)]


def tip_displacement_tt(u, d, dirichlet_sides):
    """Max |u_y| over the side opposite the (first) clamped side.

    The cantilever's extreme deflection sits on the free end, so scanning
    one side's 2^d nodes with tt_entry is enough; with no clamped side we
    scan the whole boundary.
    """
    n = 2**d
    if dirichlet_sides:
        sides = [_OPPOSITE[dirichlet_sides[0]]]
    else:
        sides = list(SIDES)
    best = 0.0
    for side in sides:
        for i, j in _side_nodes(side, n):
            best = max(best, abs(tt_entry(u, dof_multi_index(1, i, j, d))))
    return best


def _rectangle_extents(domain):
    """(lx, ly) if the corners form an axis-aligned rectangle, else None."""
    pts = np.asarray(domain, dtype=float)
    xs, ys = sorted(set(pts[:, 0])), sorted(set(pts[:, 1]))
    if len(xs) != 2 or len(ys) != 2:
        return None
    want = {(x, y) for x in xs for y in ys}
    if {tuple(p) for p in pts} != want:
        return None
    return xs[1] - xs[0], ys[1] - ys[0]


def analytic_displacement(config):
    """Closed-form cantilever tip deflection when the setup matches one.

    Requires an axis-aligned rectangle, exactly one clamped side, and a
    pure self-weight load; anything else returns None.
    """
    if config.body_force != "gravity":
        return None
    sides = config.dirichlet_sides()
    if len(sides) != 1:
        return None
    ext = _rectangle_extents(config.domain)
    if ext is None:
        return None
    lx, ly = ext
    if sides[0] in ("bottom", "top"):
        lx, ly = ly, lx
    return analytic_tip_deflection(config.material(), lx, ly, config.gravity)


def cross_solver_error(u_tt, u_classical, free_mask, d, seed, sample=4096):
    """Relative L2 distance between the two solutions on free dofs.

    Full dense comparison when the vector is small enough, otherwise a
    seeded sample of `sample` free dofs evaluated with tt_entry.
    """
    dof = 2 * 4**d
    free_idx = np.flatnonzero(free_mask)
    if dof <= DENSE_CAP:
        ud = tt_to_dense(u_tt)
        diff = np.linalg.norm(ud[free_idx] - u_classical[free_idx])
        return float(diff / np.linalg.norm(u_classical[free_idx]))
    rng = np.random.default_rng(seed)
    pick = rng.choice(free_idx, size=min(sample, free_idx.size), replace=False)
    tt_vals = np.empty(pick.size)
    for k, idx in enumerate(pick):
        comp, z = divmod(int(idx), 4**d)
        digits = tuple((z >> (2 * (d - 1 - m))) & 3 for m in range(d))
        tt_vals[k] = tt_entry(u_tt, (comp,) + digits)
    ref = u_classical[pick]
    return float(np.linalg.norm(tt_vals - ref) / np.linalg.norm(ref))


# ---------- report construction ----------


def _empty_report(config, repeat=None):
    return {
        "schema_version": SCHEMA_VERSION,
        "d": config.d,
        "dof": 2 * 4**config.d,
        "solver": config.solver,
        "repeat": repeat,
        "status": "ok",
        "error": None,
        "assembly_time_s": None,
        "solve_time_s": None,
        "total_time_s": None,
        "tt_memory_bytes": None,
        "dense_equivalent_bytes": 2 * 4**config.d * 8,
        "classical_nnz": None,
        "classical_assembly_time_s": None,
        "classical_solve_time_s": None,
        "classical_total_time_s": None,
        "classical_max_displacement_m": None,
        "classical_strain_energy_J": None,
        "rank_profiles": None,
        "final_residual": None,
        "converged": None,
        "sweeps": None,
        "max_displacement_m": None,
        "strain_energy_J": None,
        "analytic_displacement_m": None,
        "relative_error_vs_analytic": None,
        "cross_solver_rel_l2": None,
        "seed": config.seed,
        "config": config.echo(),
    }


def _run_tt(config, report):
    fx, fy = config.force_vector()
    load = constant_body_load(fx, fy, config.d)
    u, pipe = solve_elasticity(
        config.quad_domain(), config.material(), config.dirichlet_sides(),
        config.d, load, rule=config.rule(), amen_config=config.amen_config(),
        exact=config.exact_solver,
    )
    solver = pipe["solver"]
    report["assembly_time_s"] = pipe["assembly_time_s"]
    report["solve_time_s"] = pipe["solve_time_s"]
    report["total_time_s"] = pipe["total_time_s"]
    report["tt_memory_bytes"] = {
        k: int(m.tt_bytes) for k, m in pipe["memory"].items()
    }
    report["rank_profiles"] = {k: list(r) for k, r in pipe["ranks"].items()}
    report["final_residual"] = float(solver.final_relative_residual)
    report["converged"] = bool(solver.converged)
    report["sweeps"] = int(solver.sweeps_used)
    report["max_displacement_m"] = tip_displacement_tt(
        u, config.d, config.dirichlet_sides()
    )
    report["strain_energy_J"] = float(pipe["energy_J"])
    return u


def _run_classical(config, report, into_primary):
    t0 = time.perf_counter()
    system = classical_assemble(
        config.quad_domain(), config.material(), config.dirichlet_sides(),
        config.d, rule=config.rule(), body_force=config.force_vector(),
    )
    t1 = time.perf_counter()
    u = classical_solve(system)
    t2 = time.perf_counter()
    tip, energy = observables(system, u)
    rhs_norm = np.linalg.norm(system.rhs)
    resid = (
        np.linalg.norm(system.stiffness @ u - system.rhs) / rhs_norm
        if rhs_norm > 0 else 0.0
    )
    report["classical_nnz"] = int(system.stiffness.nnz)
    report["classical_assembly_time_s"] = t1 - t0
    report["classical_solve_time_s"] = t2 - t1
    report["classical_total_time_s"] = t2 - t0
    if into_primary:
        report["assembly_time_s"] = t1 - t0
        report["solve_time_s"] = t2 - t1
        report["total_time_s"] = t2 - t0
        report["final_residual"] = float(resid)
        report["converged"] = True
        report["max_displacement_m"] = float(tip)
        report["strain_energy_J"] = float(energy)
    else:
        report["classical_max_displacement_m"] = float(tip)
        report["classical_strain_energy_J"] = float(energy)
    return system, u


def build_report(config, repeat=None):
    """Run the configured solver(s) and fill a metrics report dict."""
    report = _empty_report(config, repeat)
    u_tt = None
    if config.solver in ("tt", "both"):
        u_tt = _run_tt(config, report)
        if config.save_u:
            save_tt(u_tt, config.save_u)
    if config.solver in ("classical", "both"):
        system, u_cl = _run_classical(config, report, config.solver == "classical")
        if config.solver == "both":
            report["cross_solver_rel_l2"] = cross_solver_error(
                u_tt, u_cl, system.free_mask, config.d, config.seed
            )
    analytic = analytic_displacement(config)
    if analytic is not None:
        report["analytic_displacement_m"] = float(analytic)
        if report["max_displacement_m"] is not None:
            report["relative_error_vs_analytic"] = float(
                abs(report["max_displacement_m"] - analytic) / analytic
            )
    return report


def validate_report(report):
    """Check a report against the shipped schema when jsonschema exists."""
    try:
        import jsonschema
    except ImportError:  # schema checking is best-effort at runtime
        return
    jsonschema.validate(report, load_report_schema())


def load_report_schema():
    from importlib import resources

    with resources.files("ttfem.schema").joinpath("report-v1.json").open() as fh:
        return json.load(fh)


# ---------- output ----------


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value)
    return value


def report_to_csv_row(report):
    row = {}
    flat = dict(report)
    mem = flat.pop("tt_memory_bytes", None) or {}
    ranks = flat.pop("rank_profiles", None) or {}
    for key in ("A", "M", "f", "u"):
        flat[f"tt_memory_bytes_{key}"] = mem.get(key)
        flat[f"rank_profile_{key}"] = ranks.get(key)
    for col in CSV_COLUMNS:
        row[col] = _csv_cell(flat.get(col))
    return row


def write_reports_csv(reports, stream):
    writer = csv.DictWriter(stream, fieldnames=CSV_COLUMNS, lineterminator="\r\n")
    writer.writeheader()
    for rep in reports:
        writer.writerow(report_to_csv_row(rep))


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------- subcommands ----------


def config_from_args(args):
    preset = PRESETS.get(getattr(args, "preset", None) or "beam")
    cfg = RunConfig(
        d=args.d if getattr(args, "d", None) is not None else 4,
        domain=_parse_domain(args.domain) if args.domain else preset["domain"],
        youngs_modulus=args.youngs if args.youngs is not None else preset["youngs_modulus"],
        poisson_ratio=args.poisson if args.poisson is not None else preset["poisson_ratio"],
        density=args.density if args.density is not None else preset["density"],
        bcs=_parse_bc(args.bc) if args.bc else dict(preset["bcs"]),
        body_force=_parse_body_force(args.body_force) if args.body_force else preset["body_force"],
        gravity=args.gravity,
        solver=args.solver,
        tol=args.tol,
        max_rank=args.max_rank,
        quadrature=args.quadrature,
        seed=args.seed,
        save_u=getattr(args, "save_u", None),
    )
    return cfg.validate()


def cmd_solve(args):
    config = config_from_args(args)
    report = build_report(config)
    validate_report(report)
    if args.format == "csv":
        buf = io.StringIO()
        write_reports_csv([report], buf)
        _emit(buf.getvalue(), args.out)
    else:
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    return 0


def run_validation(d_max, progress=None):
    """Oracle-equivalence checks; list of dicts with name/value/tol/ok."""
    from .elasticity import assemble_mass, assemble_rhs, assemble_stiffness
    from .tt import tt_op_to_dense

    config = RunConfig(solver="both").validate()
    domain, material = config.quad_domain(), config.material()
    sides = config.dirichlet_sides()
    force = config.force_vector()
    checks = []

    def record(name, value, tol):
        checks.append({"name": name, "value": value, "tol": tol,
                       "ok": bool(value <= tol)})
        if progress:
            progress(checks[-1])

    for d in range(2, min(3, d_max) + 1):
        system = classical_assemble(domain, material, sides, d,
                                    body_force=force)
        tt_sys = assemble_stiffness(domain, material, sides, d)
        mass = assemble_mass(domain, d)
        load = constant_body_load(*force, d)
        rhs = assemble_rhs(mass, load, tt_sys.projector)
        a_ref = system.stiffness.toarray()
        scale = np.abs(a_ref).max()
        record(f"assembly A entrywise d={d}",
               np.abs(tt_op_to_dense(tt_sys.stiffness) - a_ref).max() / scale,
               1e-9)
        m_ref = system.mass.toarray()
        record(f"assembly M entrywise d={d}",
               np.abs(tt_op_to_dense(mass) - m_ref).max() / np.abs(m_ref).max(),
               1e-9)
        record(f"assembly f entrywise d={d}",
               np.abs(tt_to_dense(rhs) - system.rhs).max()
               / max(np.abs(system.rhs).max(), 1.0),
               1e-9)
        record(f"config hash match d={d}",
               0.0 if system.config_hash == tt_sys.report["config_hash"] else 1.0,
               0.0)

    for d in range(2, d_max + 1):
        cfg = RunConfig(d=d, solver="both").validate()
        rep = build_report(cfg)
        record(f"solution rel L2 d={d}", rep["cross_solver_rel_l2"], 1e-6)

    return checks


def cmd_validate(args):
    rows = []

    def progress(check):
        status = "pass" if check["ok"] else "FAIL"
        line = (f"{check['name']:<32} {check['value']:>12.3e} "
                f"<= {check['tol']:.1e}  {status}")
        rows.append(line)
        print(line, flush=True)

    checks = run_validation(args.d_max, progress)
    failed = [c for c in checks if not c["ok"]]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(rows) + "\n")
    return 2 if failed else 0


def cmd_bench(args):
    d_values = _parse_d_range(args.d_range)
    solvers = ["tt", "classical"] if args.solver == "both" else [args.solver]
    reports = []
    for d in d_values:
        for solver in solvers:
            if solver == "classical" and d > DEFAULT_CAPACITY_D:
                continue  # capacity rows are absent, not failed
            group = []
            for rep_idx in range(args.repeats):
                cfg_args = argparse.Namespace(**vars(args))
                cfg_args.d = d
                cfg_args.solver = solver
                config = config_from_args(cfg_args)
                # rank/time campaign: trade the last couple of digits for
                # the much cheaper rounded solver operator
                config.exact_solver = False
                report = _empty_report(config, rep_idx)
                report["solver"] = solver
                try:
                    report = build_report(config, rep_idx)
                    report["solver"] = solver
                except (CapacityError, SolverError, MemoryError) as exc:
                    report["status"] = f"error:{type(exc).__name__}"
                    report["error"] = str(exc)
                group.append(report)
                print(
                    f"d={d} solver={solver} repeat={rep_idx}: "
                    f"{report['status']} total={report['total_time_s']}",
                    file=sys.stderr, flush=True,
                )
            _annotate_repeat_stats(group)
            reports.extend(group)
    buf = io.StringIO()
    write_reports_csv(reports, buf)
    _emit(buf.getvalue(), args.out)
    return 0


def _annotate_repeat_stats(group):
    ok = [r for r in group if r["status"] == "ok"]
    if not ok:
        return
    for stage in ("assembly_time_s", "solve_time_s", "total_time_s"):
        vals = [r[stage] for r in ok if r[stage] is not None]
        if not vals:
            continue
        lo, med = float(np.min(vals)), float(np.median(vals))
        for r in group:
            r[stage.replace("_s", "_min_s")] = lo
            r[stage.replace("_s", "_median_s")] = med


def cmd_export(args):
    obj = load_tt(args.tt_path)
    if args.format == "json":
        _emit(json.dumps(tt_to_json_dict(obj), indent=2) + "\n", args.out)
        return 0
    if not isinstance(obj, TensorTrain):
        raise FormatError("dense export needs a TT vector, not an operator")
    vec = tt_to_dense(obj)
    if args.out:
        np.savetxt(args.out, vec)
    else:
        np.savetxt(sys.stdout, vec)
    return 0


# ---------- argument parsing ----------


def _parse_domain(text):
    try:
        parts = [tuple(float(v) for v in chunk.split(",")) for chunk in text.split(":")]
    except ValueError:
        raise ConfigError(f"domain: cannot parse {text!r}")
    if len(parts) != 4 or any(len(p) != 2 for p in parts):
        raise ConfigError(f"domain: expected x0,y0:x1,y1:x2,y2:x3,y3, got {text!r}")
    return tuple(parts)


def _parse_bc(text):
    out = {}
    for chunk in text.split(","):
        if "=" not in chunk:
            raise ConfigError(f"bc: expected side=kind, got {chunk!r}")
        side, kind = chunk.split("=", 1)
        out[side.strip()] = kind.strip()
    return out


def _parse_body_force(text):
    if text == "gravity":
        return "gravity"
    try:
        fx, fy = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"body-force: expected fx,fy or 'gravity', got {text!r}")
    return (fx, fy)


def _parse_d_range(text):
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            values = list(range(lo, hi + 1))
        else:
            values = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"d-range: cannot parse {text!r}")
    if not values or values != sorted(values):
        raise ConfigError(f"d-range: need an ascending range, got {text!r}")
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise ConfigError(message)


def _add_problem_flags(sub):
    sub.add_argument("--preset", choices=sorted(PRESETS), default="beam")
    sub.add_argument("--domain", help="corners x0,y0:x1,y1:x2,y2:x3,y3")
    sub.add_argument("--youngs", type=float, help="Young's modulus [Pa]")
    sub.add_argument("--poisson", type=float, help="Poisson ratio")
    sub.add_argument("--density", type=float, help="density [kg/m^3]")
    sub.add_argument("--bc", help="per-side BCs, e.g. left=dirichlet,right=neumann")
    sub.add_argument("--body-force", dest="body_force",
                     help="fx,fy in N/m^3, or 'gravity' for (0, -rho*g)")
    sub.add_argument("--gravity", type=float, default=GRAVITY,
                     help="g in m/s^2 used by the gravity load (default 9.81)")
    sub.add_argument("--solver", choices=("tt", "classical", "both"), default="tt")
    sub.add_argument("--tol", type=float, default=1e-8,
                     help="solver residual tolerance")
    sub.add_argument("--max-rank", dest="max_rank", type=int, default=80)
    sub.add_argument("--quadrature", choices=("gauss", "midpoint"), default="gauss")
    sub.add_argument("--seed", type=int, default=2024)
    sub.add_argument("--out", help="output path (stdout when omitted)")


def build_parser():
    parser = _Parser(prog="ttfem", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    p_solve = subs.add_parser("solve", help="solve one configuration")
    p_solve.add_argument("--d", type=int, default=4, help="grid exponent")
    _add_problem_flags(p_solve)
    p_solve.add_argument("--format", choices=("json", "csv"), default="json")
    p_solve.add_argument("--save-u", dest="save_u",
                         help="write the TT solution to this QTT1 file")
    p_solve.set_defaults(func=cmd_solve)

    p_val = subs.add_parser("validate", help="oracle-equivalence checks")
    p_val.add_argument("--d-max", dest="d_max", type=int, default=4)
    p_val.add_argument("--out", help="also write the table to this path")
    p_val.set_defaults(func=cmd_validate)

    p_bench = subs.add_parser("bench", help="scaling campaign, CSV output")
    p_bench.add_argument("--d-range", dest="d_range", required=True,
                         help="lo:hi inclusive, or comma list")
    p_bench.add_argument("--repeats", type=int, default=1)
    _add_problem_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_exp = subs.add_parser("export", help="convert a QTT1 container")
    p_exp.add_argument("tt_path")
    p_exp.add_argument("--format", choices=("json", "dense"), default="json")
    p_exp.add_argument("--out")
    p_exp.set_defaults(func=cmd_export)

    return parser


def _diagnostic(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        _diagnostic(exc)
        return 4
    except CapacityError as exc:
        _diagnostic(exc)
        return 3
    except SolverError as exc:
        _diagnostic(exc)
        return 2
    except (ValueError, OSError) as exc:
        _diagnostic(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
