"""Manufactured obstacle benchmark on the unit cube and study harness.

The exact solution u = (max(r^2 - r0^2, 0))^2 with r the distance to
the origin touches the zero obstacle on the ball r <= r0; the matching
force is -(20 r^2 - 12 r0^2) outside the ball and a nonpositive profile
inside, so the exact multiplier is the force restricted to the contact
ball.  The default free-boundary radius is 0.7, which places the
contact sphere inside the unit cube; with much larger radii the
solution would vanish identically and the study would be meaningless.

Errors contract like h^1.5 in the energy norm on uniformly refined
meshes: the free boundary limits the usable regularity, so the full
quadratic rate is only recovered in the contact-free configuration.
"""

import json
import time
from dataclasses import dataclass

import numpy as np

from .assembly import assemble
from .estimators import error_norms
from .fem_space import build_dofmap
from .mesh import TetMesh, build_box_mesh, uniform_refine
from .solver import SolverConfig, pdas_solve

UNIT_CUBE = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
NO_OBSTACLE = -1.0e9


@dataclass(frozen=True)
class BenchmarkProblem:
    """Force, obstacle, boundary data and exact solution callables."""

    r0: float = 0.7

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("free-boundary radius r0 must be positive")

    def f(self, pts):
        pts = np.atleast_2d(pts)
        r2 = np.einsum("kd,kd->k", pts, pts)
        r02 = self.r0**2
        outside = -4.0 * (2.0 * r2 + 3.0 * (r2 - r02))
        inside = -8.0 * r02 * (1.0 - r2 + r02)
        return np.where(r2 > r02, outside, inside)

    def chi(self, pts):
        return np.zeros(len(np.atleast_2d(pts)))

    def grad_chi(self, pts):
        return np.zeros_like(np.atleast_2d(pts))

    def exact_u(self, pts):
        pts = np.atleast_2d(pts)
        r2 = np.einsum("kd,kd->k", pts, pts)
        return np.maximum(r2 - self.r0**2, 0.0) ** 2

    def exact_grad(self, pts):
        pts = np.atleast_2d(pts)
        r2 = np.einsum("kd,kd->k", pts, pts)
        return 4.0 * np.maximum(r2 - self.r0**2, 0.0)[:, None] * pts

    def exact_sigma(self, pts):
        """f on the contact ball, zero elsewhere."""
        pts = np.atleast_2d(pts)
        r2 = np.einsum("kd,kd->k", pts, pts)
        return np.where(r2 <= self.r0**2, self.f(pts), 0.0)

    g = exact_u  # Dirichlet data


def benchmark_f(point, r0: float) -> float:
    """Piecewise force value at one point."""
    return float(BenchmarkProblem(r0=r0).f(np.asarray(point, dtype=float).reshape(1, 3))[0])


@dataclass
class ConvergenceRow:
    h: float
    error_h1: float
    order: float  # nan on the first row
    dofs: int
    iters: int
    seconds: float
    converged: bool = True


@dataclass
class LevelSolution:
    """One solved refinement level, kept for estimator post-processing."""

    mesh: TetMesh
    dofmap: object
    system: object
    alpha: np.ndarray
    beta: np.ndarray
    report: object


def solve_level(mesh, problem: BenchmarkProblem, config: SolverConfig, data_degree: int = 8):
    dofmap = build_dofmap(mesh)
    system = assemble(mesh, dofmap, problem.f, problem.chi, problem.g, data_degree=data_degree)
    fe, beta, report = pdas_solve(system, config)
    return LevelSolution(
        mesh=mesh, dofmap=dofmap, system=system, alpha=fe.coeffs, beta=beta, report=report
    )


def run_convergence_study(
    levels: int,
    r0: float = 0.7,
    config: SolverConfig = None,
    n: int = 8,
    data_degree: int = 8,
    keep_solutions: bool = False,
):
    """Solve a sequence of uniformly refined meshes and report errors.

    Returns (rows, solutions); solutions is empty unless
    keep_solutions is set.  Stops early when a level fails to converge;
    the rows computed so far are still returned, with the failing level
    marked.
    """
    if levels < 1:
        raise ValueError("need at least one level")
    problem = BenchmarkProblem(r0=r0)
    config = config or SolverConfig()
    rows = []
    solutions = []
    mesh = build_box_mesh(UNIT_CUBE, n)
    prev_error = None
    for level in range(levels):
        t0 = time.perf_counter()
        sol = solve_level(mesh, problem, config, data_degree=data_degree)
        _, err_h1 = error_norms(
            mesh, sol.dofmap, sol.alpha, problem.exact_u, problem.exact_grad, degree=data_degree
        )
        seconds = time.perf_counter() - t0
        order = np.nan if prev_error is None else float(np.log2(prev_error / err_h1))
        rows.append(
            ConvergenceRow(
                h=mesh.h,
                error_h1=err_h1,
                order=order,
                dofs=sol.dofmap.size,
                iters=sol.report.iterations,
                seconds=seconds,
                converged=sol.report.converged,
            )
        )
        if keep_solutions:
            solutions.append(sol)
        if not sol.report.converged:
            break
        prev_error = err_h1
        if level + 1 < levels:
            mesh = uniform_refine(mesh)
    return rows, solutions


def format_float(x) -> str:
    """Scientific notation with six significant digits."""
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return f"{x:.5e}"


CSV_HEADER = "h,error_h1,order,dofs,iters,seconds"


def rows_to_csv(rows) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [
                    format_float(r.h),
                    format_float(r.error_h1),
                    format_float(r.order),
                    str(r.dofs),
                    str(r.iters),
                    format_float(r.seconds),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def rows_to_json_dict(rows, r0, c, n) -> dict:
    return {
        "schema_version": 1,
        "kind": "convergence_study",
        "r0": r0,
        "c": c,
        "initial_n": n,
        "rows": [
            {
                "h": r.h,
                "error_h1": r.error_h1,
                "order": None if np.isnan(r.order) else r.order,
                "dofs": r.dofs,
                "iters": r.iters,
                "seconds": r.seconds,
                "converged": r.converged,
            }
            for r in rows
        ],
    }


def write_study(out_dir, rows, r0, c, n):
    """Write convergence.csv and convergence.json under out_dir."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "convergence.csv").write_text(rows_to_csv(rows))
    with open(out / "convergence.json", "w") as fh:
        json.dump(rows_to_json_dict(rows, r0, c, n), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out / "convergence.csv", out / "convergence.json"
