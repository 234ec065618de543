import numpy as np
import pytest

from obstaclefem import assemble, build_box_mesh, build_dofmap, pdas_solve
from obstaclefem.benchmark import NO_OBSTACLE, UNIT_CUBE, BenchmarkProblem
from obstaclefem.solver import SolverConfig


def no_obstacle(pts):
    return np.full(len(np.atleast_2d(pts)), NO_OBSTACLE)


def zero(pts):
    return np.zeros(len(np.atleast_2d(pts)))


@pytest.fixture(scope="session")
def cube1():
    return build_box_mesh(UNIT_CUBE, 1)


@pytest.fixture(scope="session")
def cube2():
    return build_box_mesh(UNIT_CUBE, 2)


@pytest.fixture(scope="session")
def cube3():
    return build_box_mesh(UNIT_CUBE, 3)


@pytest.fixture(scope="session")
def benchmark_solve_n2():
    """Converged benchmark solve on the n=2 cube (173 DOFs)."""
    problem = BenchmarkProblem(r0=0.7)
    mesh = build_box_mesh(UNIT_CUBE, 2)
    dofmap = build_dofmap(mesh)
    system = assemble(mesh, dofmap, problem.f, problem.chi, problem.g)
    fe, beta, report = pdas_solve(system, SolverConfig(progress_log=False))
    assert report.converged
    return problem, mesh, dofmap, system, fe.coeffs, beta, report


@pytest.fixture(scope="session")
def benchmark_solve_n4():
    problem = BenchmarkProblem(r0=0.7)
    mesh = build_box_mesh(UNIT_CUBE, 4)
    dofmap = build_dofmap(mesh)
    system = assemble(mesh, dofmap, problem.f, problem.chi, problem.g)
    fe, beta, report = pdas_solve(system, SolverConfig(progress_log=False))
    assert report.converged
    return problem, mesh, dofmap, system, fe.coeffs, beta, report
