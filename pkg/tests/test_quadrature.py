import numpy as np
import pytest

from obstaclefem import build_box_mesh, integrate_tet, tet_rule, tri_rule
from obstaclefem.quadrature import MAX_DEGREE

from oracles import monomials_up_to, monte_carlo_tet_mean, tet_monomial_mean, tri_monomial_mean


@pytest.mark.parametrize("degree", range(1, MAX_DEGREE + 1))
def test_tet_exactness_vs_factorial_formula(degree):
    rule = tet_rule(degree)
    for exps in monomials_up_to(degree, 4):
        got = float(rule.weights @ np.prod(rule.points ** np.array(exps), axis=1))
        want = tet_monomial_mean(exps)
        assert got == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("degree", range(1, MAX_DEGREE + 1))
def test_tri_exactness_vs_factorial_formula(degree):
    rule = tri_rule(degree)
    for exps in monomials_up_to(degree, 3):
        got = float(rule.weights @ np.prod(rule.points ** np.array(exps), axis=1))
        want = tri_monomial_mean(exps)
        assert got == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("degree", range(1, MAX_DEGREE + 1))
def test_rule_structure(degree):
    for rule, nb in ((tet_rule(degree), 4), (tri_rule(degree), 3)):
        assert rule.points.shape[1] == nb
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.all(rule.points >= 0.0) and np.all(rule.points <= 1.0)
        np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, atol=1e-14)


@pytest.mark.parametrize("degree", [0, -1, 9, 100])
def test_unsupported_degree_rejected(degree):
    with pytest.raises(ValueError):
        tet_rule(degree)
    with pytest.raises(ValueError):
        tri_rule(degree)


def test_quartic_product_and_bubble():
    # lambda_1 lambda_2 lambda_3 lambda_4 integrates to |T|/840
    rule = tet_rule(4)
    got = float(rule.weights @ np.prod(rule.points, axis=1))
    assert got == pytest.approx(1.0 / 840.0, rel=1e-12)
    # the normalized bubble has mean 32/105; cross-checked by Monte Carlo
    bubble = lambda lam: 256.0 * np.prod(lam, axis=1)
    got = float(rule.weights @ bubble(rule.points))
    assert got == pytest.approx(32.0 / 105.0, rel=1e-12)
    mc = monte_carlo_tet_mean(bubble, 50_000_000, seed=42)
    assert got == pytest.approx(mc, abs=1e-4)


def test_tri_named_values():
    rule = tri_rule(2)
    got = float(rule.weights @ (rule.points[:, 0] * rule.points[:, 1]))
    assert got == pytest.approx(1.0 / 12.0, rel=1e-12)
    rule = tri_rule(6)
    f = (rule.points[:, 0] * rule.points[:, 1] * rule.points[:, 2]) ** 2
    assert float(rule.weights @ f) == pytest.approx(tri_monomial_mean((2, 2, 2)), rel=1e-12)
    assert tri_monomial_mean((2, 2, 2)) == pytest.approx(1.0 / 2520.0)


def test_integrate_tet_constant_and_coordinate(cube1):
    rule = tet_rule(2)
    for t in range(len(cube1.tets)):
        got = integrate_tet(cube1, t, rule, lambda p: np.full(len(p), 3.5))
        assert got == pytest.approx(3.5 * cube1.volumes[t], rel=1e-13)


def test_integrate_tet_reference_coordinate():
    # single reference tetrahedron, integral of x is 1/24
    from obstaclefem.mesh import TetMesh

    mesh = TetMesh(
        vertices=np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]),
        tets=np.array([[0, 1, 2, 3]]),
    )
    got = integrate_tet(mesh, 0, tet_rule(1), lambda p: p[:, 0])
    assert got == pytest.approx(1.0 / 24.0, rel=1e-13)


def test_integrate_tet_polynomial_matches_oracle(cube2):
    # random barycentric polynomial of degree 5 integrated with a degree-5+
    # rule must match the factorial-formula oracle exactly
    rng = np.random.default_rng(3)
    terms = [(exps, rng.standard_normal()) for exps in monomials_up_to(5, 4)]
    t = 7
    glam = cube2.lambda_grads[t]
    v0 = cube2.vertices[cube2.tets[t, 0]]

    def poly(p):
        lam = (p - v0) @ glam.T
        lam[:, 0] += 1.0
        out = np.zeros(len(p))
        for exps, coef in terms:
            out += coef * np.prod(lam ** np.array(exps), axis=1)
        return out

    want = cube2.volumes[t] * sum(c * tet_monomial_mean(e) for e, c in terms)
    for degree in (5, 6, 8):
        got = integrate_tet(cube2, t, tet_rule(degree), poly)
        assert got == pytest.approx(want, rel=1e-13)
