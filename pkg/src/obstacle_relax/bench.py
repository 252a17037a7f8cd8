"""Benchmark harness: alpha sweeps, derivative checks, oracle comparisons.

Tables are written as CSV with six significant digits; a JSON report next
to each table keeps full precision together with the run configuration and
per-stage KKT residuals.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import smoothing as sm
from .grid import WEIGHTINGS, Grid, ProblemData, build_grid, example71_data, grid_dump
from .model import RelaxedOcp, solve_state
from .solver import SolverConfig, SolveReport, alpha_continuation, config_dict, solve_barrier, solve_penalty
from .vi import solve_vi

log = logging.getLogger(__name__)

SOLVERS = ("barrier", "penalty")
GRADCHECK_LIMIT = 1e-5
CALIBRATION_TARGET = 2.8572e2


@dataclass
class RunSpec:
    n: int = 20
    theta: str = "frac"
    alphas: tuple = (1e-3,)
    solver: str = "barrier"
    weighting: str = "node-sum"
    tol: float = 1e-3
    max_iter: int = 500
    out: str | None = None
    seed: int = 0
    deterministic: bool = False
    warm_start: bool = True

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        self.theta = sm.SmoothingFn(self.theta, 1.0).kind
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n!r}")
        self.n = int(self.n)
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; expected one of {SOLVERS}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r}; expected one of {WEIGHTINGS}")
        if any(not a > 0 for a in self.alphas):
            raise ValueError("alpha values must be positive")
        if any(b >= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ValueError("alpha schedule must be strictly decreasing")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("tol and max_iter must be positive")

    def config(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, max_iter=self.max_iter)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = list(self.alphas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown RunSpec fields: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RunSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TableRow:
    alpha: float
    state_residual_2: float
    comp_error: float
    objective: float
    iterations: int
    wall_time_ms: float
    converged: bool = True

    @classmethod
    def from_report(cls, rep: SolveReport) -> "TableRow":
        return cls(alpha=rep.alpha, state_residual_2=rep.state_residual_2, comp_error=rep.comp_error,
                   objective=rep.objective, iterations=rep.iterations, wall_time_ms=rep.wall_time_ms,
                   converged=rep.converged)


TABLE_FIELDS = [f.name for f in fields(TableRow)]
_FLOAT_FIELDS = ("alpha", "state_residual_2", "comp_error", "objective", "wall_time_ms")


def format_sci(x: float) -> str:
    """Scientific notation with six significant digits."""
    return f"{x:.5e}"


def row_cells(row: TableRow) -> list[str]:
    cells = []
    for k in TABLE_FIELDS:
        val = getattr(row, k)
        if k in _FLOAT_FIELDS:
            cells.append(format_sci(val))
        elif k == "converged":
            cells.append("true" if val else "false")
        else:
            cells.append(str(val))
    return cells


def write_table(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_FIELDS)
        for row in rows:
            w.writerow(row_cells(row))


def read_table(path) -> list[TableRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TABLE_FIELDS:
            raise ValueError(f"unexpected table header {reader.fieldnames}")
        for rec in reader:
            rows.append(TableRow(
                **{k: float(rec[k]) for k in _FLOAT_FIELDS},
                iterations=int(rec["iterations"]),
                converged=rec["converged"] == "true",
            ))
    return rows


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def write_report(report: dict, path) -> None:
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(_jsonable(report), indent=2) + "\n")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def _report_path(out) -> Path:
    return Path(out).with_suffix(".json")


def _problem(spec: RunSpec) -> tuple[Grid, ProblemData]:
    grid = build_grid(spec.n)
    return grid, example71_data(grid)


def solve_schedule(spec: RunSpec) -> list[SolveReport]:
    """One report per alpha of the schedule, with the configured solver."""
    grid, data = _problem(spec)
    cfg = spec.config()
    if not spec.alphas:
        return []
    if spec.solver == "barrier":
        return alpha_continuation(grid, data, spec.theta, spec.alphas, cfg, weighting=spec.weighting,
                                  warm_start=spec.warm_start)
    reps = []
    prev = None
    for alpha in spec.alphas:
        ocp = RelaxedOcp(grid, data, sm.SmoothingFn(spec.theta, alpha), weighting=spec.weighting)
        start = prev.z if (spec.warm_start and prev is not None and prev.converged) else None
        prev = solve_penalty(ocp, cfg, start=start)
        reps.append(prev)
    return reps


def run_table(spec: RunSpec) -> tuple[list[TableRow], dict]:
    """Solve every alpha of the schedule and emit the table (and JSON report if ``out`` is set)."""
    t0 = time.perf_counter()
    reps = solve_schedule(spec)
    rows = [TableRow.from_report(r) for r in reps]
    report = {
        "kind": "table",
        "spec": spec.to_dict(),
        "solver_config": config_dict(spec.config()),
        "rows": [asdict(r) for r in rows],
        "stages": [r.metrics() for r in reps],
        "all_converged": all(r.converged for r in reps),
        "wall_time_s": time.perf_counter() - t0,
    }
    if spec.out:
        write_table(rows, spec.out)
        write_report(report, _report_path(spec.out))
    return rows, report


# -- derivative checks ---------------------------------------------------

def central_difference(fun, x, direction, step: float = 1e-6):
    """Central difference of ``fun`` at ``x`` along ``direction``.

    A zero direction returns an exact zero without evaluating ``fun``.
    """
    direction = np.asarray(direction, dtype=float)
    if not np.any(direction):
        return np.zeros_like(np.asarray(fun(x), dtype=float))
    return (np.asarray(fun(x + step * direction)) - np.asarray(fun(x - step * direction))) / (2 * step)


def _fd_gradient(fun, x, step):
    g = np.empty_like(x)
    e = np.zeros_like(x)
    for i in range(x.size):
        e[i] = 1.0
        g[i] = central_difference(fun, x, e, step)
        e[i] = 0.0
    return g


def _fd_jacobian(fun, x, step):
    cols = []
    e = np.zeros_like(x)
    for i in range(x.size):
        e[i] = 1.0
        cols.append(central_difference(fun, x, e, step))
        e[i] = 0.0
    return np.column_stack(cols)


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_instance(n: int, rng: np.random.Generator, kind: str = "frac", alpha: float = 0.1,
                    weighting: str = "node-sum") -> tuple[RelaxedOcp, np.ndarray]:
    """Random data and a random point strictly inside the bounds."""
    grid = build_grid(n)
    m = grid.interior_count
    data = ProblemData(f=rng.normal(0.0, 10.0, m), psi=rng.normal(0.0, 0.3, m), z_d=rng.normal(1.0, 0.5, m),
                       v_d=rng.normal(0.0, 1.0, m), nu=float(rng.uniform(0.05, 1.0)))
    ocp = RelaxedOcp(grid, data, sm.SmoothingFn(kind, alpha), weighting=weighting)
    y = data.psi + rng.uniform(0.05, 1.0, m)
    v = rng.normal(0.0, 2.0, m)
    xi = rng.uniform(0.05, 1.0, m)
    return ocp, ocp.pack(y, v, xi)


def run_gradcheck(spec: RunSpec) -> dict:
    """Max relative errors of every analytic derivative against central differences."""
    if spec.n > 12:
        raise ValueError("gradient checks are limited to n <= 12")
    rng = np.random.default_rng(spec.seed)
    alpha = spec.alphas[0] if spec.alphas else 0.1
    ocp, z = random_instance(spec.n, rng, spec.theta, alpha, spec.weighting)
    anchor = z + rng.normal(0.0, 0.1, z.size)
    eps = 0.5
    m = ocp.m
    step = 1e-6

    errs = {}
    errs["objective"] = _rel(ocp.objective_grad(z), _fd_gradient(ocp.objective, z, step))
    errs["state_jacobian"] = _rel(ocp.state_jacobian(z).toarray(), _fd_jacobian(ocp.state_residual, z, step))
    # complementarity: perturbations stay well inside the bounds (gaps >= 0.05)
    errs["complementarity_jacobian"] = _rel(ocp.complementarity_jacobian(z).toarray(),
                                            _fd_jacobian(ocp.complementarity_constraints, z, step))
    errs["penalized_gradient"] = _rel(ocp.penalized_grad(z, eps, anchor),
                                      _fd_gradient(lambda x: ocp.penalized_objective(x, eps, anchor), z, step))

    _, v, xi = ocp.split(z)
    y0 = solve_state(ocp, v, xi)
    grad, _ = ocp.reduced_gradient(v, xi, y0=y0)
    fd = _fd_gradient(lambda u: ocp.reduced_objective(u, xi, y0=y0), v, 1e-5)
    errs["reduced_gradient"] = _rel(grad, fd)

    worst = max(errs.values())
    return {
        "kind": "gradcheck",
        "spec": spec.to_dict(),
        "unknowns": 3 * m,
        "errors": errs,
        "max_error": worst,
        "limit": GRADCHECK_LIMIT,
        "passed": bool(worst <= GRADCHECK_LIMIT),
    }


def dense_reduced_gradient(ocp: RelaxedOcp, v, xi) -> np.ndarray:
    """Reduced gradient through dense linear algebra; valid for linear g only."""
    d = ocp.data
    c0 = float(np.atleast_1d(d.g.dg(np.zeros(1)))[0])
    op = ocp.A.toarray() + c0 * np.eye(ocp.m)
    y = np.linalg.solve(op, d.f + v + xi)
    p = np.linalg.solve(op.T, y - d.z_d)
    return ocp.w * (d.nu * (v - d.v_d) + p)


# -- oracle comparison ---------------------------------------------------

def run_oracle_compare(spec: RunSpec) -> dict:
    """Distance between relaxed states and obstacle-problem states at the same control."""
    grid, data = _problem(spec)
    reps = solve_schedule(spec)
    stages = []
    for rep in reps:
        vi = solve_vi(grid, data, rep.v, tol=1e-10)
        stages.append({
            "alpha": rep.alpha,
            "vi_distance_inf": float(np.max(np.abs(rep.y - vi.y), initial=0.0)),
            "comp_error": rep.comp_error,
            "converged": rep.converged,
            "vi_converged": vi.converged,
            "objective": rep.objective,
        })
    dist = [s["vi_distance_inf"] for s in stages]
    nonincreasing = all(b <= a for a, b in zip(dist, dist[1:]))
    report = {
        "kind": "oracle",
        "spec": spec.to_dict(),
        "stages": stages,
        "distance_nonincreasing": nonincreasing,
        "all_converged": all(s["converged"] and s["vi_converged"] for s in stages),
    }
    if spec.theta == "frac":
        report["comp_within_alpha2"] = all(s["comp_error"] <= s["alpha"] ** 2 for s in stages)
    if spec.out:
        write_report(report, _report_path(spec.out))
    return report


# -- weighting calibration -----------------------------------------------

def calibrate_weighting(n: int = 20, kind: str = "frac", alpha: float = 1e-3,
                        target: float = CALIBRATION_TARGET, cfg: SolverConfig | None = None) -> tuple[str, dict]:
    """Solve under every weighting mode and pick the one whose objective is closest to ``target``.

    The solve reaches ``alpha`` by warm-started continuation from 0.1.
    """
    grid = build_grid(n)
    data = example71_data(grid)
    schedule = [a for a in (0.1, 1e-2) if a > alpha] + [alpha]
    results = {}
    for mode in WEIGHTINGS:
        rep = alpha_continuation(grid, data, kind, schedule, cfg, weighting=mode)[-1]
        results[mode] = {
            "objective": rep.objective,
            "converged": rep.converged,
            "relative_gap": abs(rep.objective - target) / abs(target),
        }
    chosen = min(WEIGHTINGS, key=lambda k: results[k]["relative_gap"])
    return chosen, {"kind": "calibrate", "n": n, "theta": kind, "alpha": alpha, "target": target,
                    "selected": chosen, "modes": results}


def solve_single(spec: RunSpec, dump=None) -> dict:
    """Solve the last alpha of the schedule (via continuation) and optionally dump the fields."""
    reps = solve_schedule(spec)
    if not reps:
        return {"kind": "solve", "spec": spec.to_dict(), "stages": [], "all_converged": True}
    final = reps[-1]
    report = {"kind": "solve", "spec": spec.to_dict(), "solver_config": config_dict(spec.config()),
              "stages": [r.metrics() for r in reps], "all_converged": all(r.converged for r in reps)}
    if dump:
        grid = build_grid(spec.n)
        psi = example71_data(grid).psi
        Path(dump).write_text(grid_dump(grid, y=final.y, v=final.v, xi=final.xi, psi=psi))
    if spec.out:
        write_report(report, _report_path(spec.out))
    return report
