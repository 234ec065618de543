import json

import numpy as np
import pytest

from obstaclefem import (
    build_box_mesh,
    build_dofmap,
    compute_sigma_h,
    error_norms,
    estimate,
    estimator_eta1,
    estimator_eta2,
    interior_faces,
    interpolate,
    obstacle_terms,
    tri_rule,
)
from obstaclefem.benchmark import UNIT_CUBE, BenchmarkProblem, solve_level
from obstaclefem.estimators import element_means_of
from obstaclefem.fem_space import eval_function
from obstaclefem.mesh import TetMesh
from obstaclefem.solver import SolverConfig

from conftest import zero


def test_sigma_for_constant_force_and_zero_solution(cube2):
    dofmap = build_dofmap(cube2)
    kappa = -3.25
    f = lambda p: np.full(len(np.atleast_2d(p)), kappa)
    sigma = compute_sigma_h(cube2, dofmap, np.zeros(dofmap.size), f)
    np.testing.assert_allclose(sigma, kappa, rtol=1e-12)


def test_sigma_matches_solver_multiplier(benchmark_solve_n4):
    problem, mesh, dofmap, system, alpha, beta, report = benchmark_solve_n4
    sigma = compute_sigma_h(mesh, dofmap, alpha, problem.f)
    scale = np.abs(beta).max()
    np.testing.assert_allclose(sigma, beta, atol=1e-8 * scale, rtol=1e-8)


def test_sigma_sign_and_support(benchmark_solve_n4):
    problem, mesh, dofmap, system, alpha, beta, report = benchmark_solve_n4
    sigma = compute_sigma_h(mesh, dofmap, alpha, problem.f)
    scale = np.abs(sigma).max()
    assert sigma.max() <= 1e-9 * scale
    # zero multiplier wherever the solution mean is above the obstacle mean
    means_u = element_means_of(mesh, dofmap, alpha)
    off_contact = means_u > system.gamma + 1e-9 * (1 + np.abs(system.gamma).max())
    assert np.abs(sigma[off_contact]).max() <= 1e-9 * scale


def harmonic_quadratic(p):
    p = np.atleast_2d(p)
    return p[:, 0] ** 2 - p[:, 1] ** 2 + 2.0 * p[:, 0] * p[:, 2]


def test_eta1_zero_for_harmonic_quadratic(cube2):
    dofmap = build_dofmap(cube2)
    fe = interpolate(cube2, dofmap, harmonic_quadratic)
    per_el, total = estimator_eta1(cube2, dofmap, fe.coeffs, zero, np.zeros(len(cube2.tets)))
    assert total <= 1e-10
    assert per_el.max() <= 1e-20


def test_eta1_for_unit_force(cube2):
    # zero solution and f = 1: the residual is exactly 1 on every element
    dofmap = build_dofmap(cube2)
    one = lambda p: np.ones(len(np.atleast_2d(p)))
    per_el, total = estimator_eta1(cube2, dofmap, np.zeros(dofmap.size), one, np.zeros(len(cube2.tets)))
    want = cube2.diameters**2 * cube2.volumes
    np.testing.assert_allclose(per_el, want, rtol=1e-12)
    assert total == pytest.approx(np.sqrt(want.sum()), rel=1e-12)


def test_eta2_zero_for_global_quadratic(cube2):
    dofmap = build_dofmap(cube2)
    fe = interpolate(cube2, dofmap, harmonic_quadratic)
    per_face, total = estimator_eta2(cube2, dofmap, fe.coeffs)
    assert total <= 1e-10


def two_tet_mesh():
    # two tets sharing the face (0, 1, 2)
    return TetMesh(
        vertices=np.array(
            [[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [0.1, 0.2, 1.0], [0.3, 0.1, -1.0]]
        ),
        tets=np.array([[0, 1, 2, 3], [0, 1, 2, 4]]),
    )


def test_eta2_single_face_against_pointwise_oracle():
    mesh = two_tet_mesh()
    dofmap = build_dofmap(mesh)
    rng = np.random.default_rng(8)
    alpha = rng.standard_normal(dofmap.size)

    faces = interior_faces(mesh)
    assert len(faces) == 1
    fv, t_minus, t_plus, normal, h_e = faces[0]

    # independent path: evaluate one-sided gradients pointwise with
    # eval_function at triangle quadrature nodes and compose the jump
    rule = tri_rule(6)
    corners = mesh.vertices[fv]
    area = 0.5 * np.linalg.norm(np.cross(corners[1] - corners[0], corners[2] - corners[0]))
    acc = 0.0
    for q, w in zip(rule.points, rule.weights):
        x = q @ corners
        _, g_minus = eval_function(mesh, dofmap, alpha, t_minus, mesh.barycentric(t_minus, x)[0])
        _, g_plus = eval_function(mesh, dofmap, alpha, t_plus, mesh.barycentric(t_plus, x)[0])
        jump = (g_minus - g_plus) @ normal
        acc += w * jump**2
    want = h_e * area * acc

    per_face, total = estimator_eta2(mesh, dofmap, alpha)
    assert per_face[0] == pytest.approx(want, rel=1e-12)
    assert total == pytest.approx(np.sqrt(want), rel=1e-12)
    assert want > 0


def test_obstacle_terms_cases(cube2):
    dofmap = build_dofmap(cube2)
    m = len(cube2.tets)
    # solution identically zero against a zero obstacle: both terms vanish
    g1, g2 = obstacle_terms(cube2, dofmap, np.zeros(dofmap.size), zero, np.zeros(m))
    assert g1 == pytest.approx(0.0, abs=1e-14)
    assert g2 == pytest.approx(0.0, abs=1e-14)

    # u_h above the obstacle everywhere: no penetration term
    fe = interpolate(cube2, dofmap, lambda p: np.ones(len(np.atleast_2d(p))))
    chi_low = lambda p: np.full(len(np.atleast_2d(p)), -1.0)
    g1, g2 = obstacle_terms(cube2, dofmap, fe.coeffs, chi_low, np.zeros(m))
    assert g1 == pytest.approx(0.0, abs=1e-13)

    # nonpositive multipliers and a nonnegative integrand give a
    # nonnegative violation term on any data
    rng = np.random.default_rng(9)
    alpha = 0.1 * rng.standard_normal(dofmap.size)
    sigma = -np.abs(rng.standard_normal(m))
    _, viol = obstacle_terms(cube2, dofmap, alpha, zero, sigma, contact_tol=1e9)
    assert viol >= 0.0


def test_error_norms_zero_function(cube2):
    dofmap = build_dofmap(cube2)
    problem = BenchmarkProblem(r0=0.7)
    l2, h1 = error_norms(cube2, dofmap, np.zeros(dofmap.size), problem.exact_u, problem.exact_grad)
    # against the zero function the "error" is the norm of the exact field
    from obstaclefem.quadrature import tet_rule

    rule = tet_rule(8)
    corners = cube2.vertices[cube2.tets]
    acc = 0.0
    for q, w in zip(rule.points, rule.weights):
        pts = np.einsum("i,tid->td", q, corners)
        g = problem.exact_grad(pts)
        acc += w * np.einsum("td,td->t", g, g) @ cube2.volumes
    assert h1 == pytest.approx(np.sqrt(acc), rel=1e-13)


def test_error_norms_exact_reproduction(cube2):
    dofmap = build_dofmap(cube2)
    fe = interpolate(cube2, dofmap, harmonic_quadratic)

    def grad(p):
        p = np.atleast_2d(p)
        return np.stack(
            [2 * p[:, 0] + 2 * p[:, 2], -2 * p[:, 1], 2 * p[:, 0]], axis=1
        )

    l2, h1 = error_norms(cube2, dofmap, fe.coeffs, harmonic_quadratic, grad)
    assert l2 <= 1e-12
    assert h1 <= 1e-11


@pytest.mark.slow
def test_estimators_decrease_under_refinement():
    problem = BenchmarkProblem(r0=0.7)
    config = SolverConfig(progress_log=False)
    mesh = build_box_mesh(UNIT_CUBE, 2)
    eta1s, eta2s = [], []
    from obstaclefem.mesh import uniform_refine

    for _ in range(3):
        sol = solve_level(mesh, problem, config)
        sigma = compute_sigma_h(mesh, sol.dofmap, sol.alpha, problem.f)
        _, e1 = estimator_eta1(mesh, sol.dofmap, sol.alpha, problem.f, sigma)
        _, e2 = estimator_eta2(mesh, sol.dofmap, sol.alpha)
        eta1s.append(e1)
        eta2s.append(e2)
        mesh = uniform_refine(mesh)
    assert eta1s[0] > eta1s[1] > eta1s[2]
    assert eta2s[0] > eta2s[1] > eta2s[2]


def test_report_totals_and_json(tmp_path, benchmark_solve_n2):
    problem, mesh, dofmap, system, alpha, beta, report = benchmark_solve_n2
    rep = estimate(
        mesh,
        dofmap,
        alpha,
        problem.f,
        problem.chi,
        grad_chi=problem.grad_chi,
        exact_u=problem.exact_u,
        exact_grad=problem.exact_grad,
    )
    assert rep.eta1_total == pytest.approx(np.sqrt(rep.per_element_eta1_sq.sum()), rel=1e-12)
    assert rep.eta2_total == pytest.approx(np.sqrt(rep.per_face_eta2_sq.sum()), rel=1e-12)
    total = rep.eta1_total**2 + rep.eta2_total**2 + rep.grad_violation + rep.contact_violation
    assert rep.estimator_total_sq == pytest.approx(total, rel=1e-12)
    assert rep.grad_violation >= 0 and rep.contact_violation >= 0
    assert rep.effectivity == pytest.approx(rep.true_error_h1**2 / total, rel=1e-12)

    path = tmp_path / "estimate.json"
    rep.write_json(path, per_element=True)
    data = json.loads(path.read_text())
    assert data["schema_version"] == 1
    assert data["kind"] == "estimator_report"
    assert len(data["per_element_eta1_sq"]) == len(mesh.tets)
    assert data["eta1_total"] == pytest.approx(rep.eta1_total)
