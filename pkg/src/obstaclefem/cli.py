"""Command-line driver: solve, convergence study, estimator report.

Exit codes: 0 on success, 1 on input errors (including unknown flags),
2 when the active-set iteration fails to converge.
"""

import argparse
import json
import pathlib
import sys

import numpy as np

from .benchmark import (
    UNIT_CUBE,
    BenchmarkProblem,
    run_convergence_study,
    solve_level,
    write_study,
)
from .solver import SolverConfig
from .estimators import estimate as estimate_report
from .fem_space import build_dofmap
from .mesh import build_box_mesh, write_vtk


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(p):
    p.add_argument("--n", type=int, default=4, help="initial subdivisions per axis")
    p.add_argument("--r0", type=float, default=0.7, help="free-boundary radius")
    p.add_argument("--c", type=float, default=1.0, help="complementarity scaling")
    p.add_argument("--max-iter", type=int, default=60, help="active-set iteration budget")
    p.add_argument("--tol", type=float, default=1e-11, help="inner linear solve tolerance")
    p.add_argument("--out-dir", default="out", help="output directory")
    p.add_argument(
        "--quad-degree-override",
        type=int,
        default=None,
        metavar="D",
        help="override the degree-8 data/error quadrature (stiffness stays exact)",
    )


def build_parser():
    parser = _Parser(prog="obstacle-fem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one mesh level and write VTK/JSON/NPZ")
    _add_common(p_solve)
    p_solve.add_argument("--per-element", action="store_true", help="include per-element arrays in JSON")

    p_conv = sub.add_parser("convergence", help="uniform refinement study with CSV/JSON output")
    _add_common(p_conv)
    p_conv.add_argument("--levels", type=int, default=3, help="number of refinement levels")

    p_est = sub.add_parser("estimate", help="estimator report from a stored solve")
    _add_common(p_est)
    p_est.add_argument("--solution", default=None, help="stored solution NPZ (default OUT_DIR/solution.npz)")
    p_est.add_argument("--per-element", action="store_true", help="include per-element arrays in JSON")
    return parser


def _validate(args, parser):
    if args.r0 <= 0:
        parser.error(f"--r0 must be positive, got {args.r0}")
    if args.n < 1:
        parser.error(f"--n must be at least 1, got {args.n}")
    if args.c <= 0:
        parser.error(f"--c must be positive, got {args.c}")
    if getattr(args, "levels", 2) < 2:
        parser.error(f"--levels must be at least 2, got {args.levels}")
    if args.quad_degree_override is not None and not 1 <= args.quad_degree_override <= 8:
        parser.error(f"--quad-degree-override must be in 1..8, got {args.quad_degree_override}")


def _config(args):
    return SolverConfig(c=args.c, max_iterations=args.max_iter, linear_tol=args.tol)


def _data_degree(args):
    return args.quad_degree_override if args.quad_degree_override is not None else 8


def _cmd_solve(args):
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = BenchmarkProblem(r0=args.r0)
    mesh = build_box_mesh(UNIT_CUBE, args.n)
    sol = solve_level(mesh, problem, _config(args), data_degree=_data_degree(args))
    report = estimate_report(
        mesh,
        sol.dofmap,
        sol.alpha,
        problem.f,
        problem.chi,
        grad_chi=problem.grad_chi,
        exact_u=problem.exact_u,
        exact_grad=problem.exact_grad,
    )
    write_vtk(
        out / "solution.vtk",
        mesh,
        point_data={"u_h": sol.alpha[: len(mesh.vertices)]},
        cell_data={"sigma_h": report.sigma_h},
        title=f"obstacle solve n={args.n} r0={args.r0}",
    )
    np.savez(
        out / "solution.npz",
        alpha=sol.alpha,
        beta=sol.beta,
        n=args.n,
        r0=args.r0,
        c=args.c,
    )
    report.write_json(out / "estimate.json", per_element=args.per_element)
    if not sol.report.converged:
        print(f"solver did not converge: {sol.report.message}", file=sys.stderr)
        return 2
    return 0


def _cmd_convergence(args):
    rows, _ = run_convergence_study(
        levels=args.levels,
        r0=args.r0,
        config=_config(args),
        n=args.n,
        data_degree=_data_degree(args),
    )
    write_study(args.out_dir, rows, args.r0, args.c, args.n)
    if not all(r.converged for r in rows) or len(rows) < args.levels:
        print("convergence study aborted on a non-converged level; partial results written", file=sys.stderr)
        return 2
    return 0


def _cmd_estimate(args):
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = pathlib.Path(args.solution) if args.solution else out / "solution.npz"
    if not path.exists():
        print(f"stored solution not found: {path}", file=sys.stderr)
        return 1
    data = np.load(path)
    n = int(data["n"])
    r0 = float(data["r0"])
    problem = BenchmarkProblem(r0=r0)
    mesh = build_box_mesh(UNIT_CUBE, n)
    dofmap = build_dofmap(mesh)
    alpha = np.asarray(data["alpha"], dtype=float)
    if len(alpha) != dofmap.size:
        print(
            f"stored coefficients ({len(alpha)}) do not match the mesh for n={n} ({dofmap.size} DOFs)",
            file=sys.stderr,
        )
        return 1
    report = estimate_report(
        mesh,
        dofmap,
        alpha,
        problem.f,
        problem.chi,
        grad_chi=problem.grad_chi,
        exact_u=problem.exact_u,
        exact_grad=problem.exact_grad,
    )
    report.write_json(out / "estimate.json", per_element=args.per_element)
    return 0


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(args, parser)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "convergence":
            return _cmd_convergence(args)
        return _cmd_estimate(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
