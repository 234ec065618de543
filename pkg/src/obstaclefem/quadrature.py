"""Quadrature rules on reference simplices, exact to a requested degree.

Two constructions are provided.  The default is Grundmann-Moller, which
for index s integrates all polynomials of total degree <= 2s+1 exactly;
it is compact but carries negative weights, which is harmless for
polynomial integrands.  Passing positive=True instead builds a conical
product (collapsed Gauss-Jacobi) rule with strictly positive weights;
those are the right choice for integrands that are only piecewise
smooth, such as positive parts, where negative weights could return a
negative value for a nonnegative integrand.

Points are stored as barycentric coordinates and weights are relative
to the entity measure (they sum to 1), so a rule applies unchanged to
any tetrahedron or triangle.  Exactness against the Dirichlet
(factorial) integral formula is the contract for both families.
"""

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 8


@dataclass(frozen=True)
class QuadRule:
    """Quadrature points in barycentric coordinates with relative weights.

    points has shape (n_points, n_bary) where n_bary is 4 for
    tetrahedra and 3 for triangles; weights sum to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        assert abs(self.weights.sum() - 1.0) < 1e-13


def _compositions(total, parts):
    """All tuples of `parts` nonnegative integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def _grundmann_moller(dim, s):
    """Grundmann-Moller rule of index s on the dim-simplex.

    Exact for polynomial degree 2s+1.  Weights are returned relative to
    the simplex measure (multiplied by dim! from the standard-simplex
    form, so they sum to one).
    """
    d = 2 * s + 1
    points = []
    weights = []
    for i in range(s + 1):
        denom = d + dim - 2 * i
        w = (-1.0) ** i * 2.0 ** (-2 * s) * float(denom) ** d
        w /= factorial(i) * factorial(d + dim - i)
        w *= factorial(dim)
        for beta in _compositions(s - i, dim + 1):
            points.append([(2 * b + 1) / denom for b in beta])
            weights.append(w)
    return np.asarray(points, dtype=float), np.asarray(weights, dtype=float)


def _jacobi01(n, alpha):
    """Gauss-Jacobi nodes/weights on [0, 1] for the weight (1-t)^alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


def _conical_product(dim, degree):
    """Collapsed-coordinate product rule on the dim-simplex.

    The Duffy map t -> x peels off one coordinate at a time; the
    Jacobian factors (1-t_k)^(dim-1-k) are absorbed into Gauss-Jacobi
    weights, so an n-point rule per axis is exact for total degree
    2n-1 with all weights positive.
    """
    n = degree // 2 + 1
    axes = [_jacobi01(n, dim - 1 - k) for k in range(dim)]
    pts_x = np.zeros((n**dim,) + (dim,))
    wts = np.ones(n**dim)
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    for k in range(dim):
        wk = np.meshgrid(*[a[1] for a in axes], indexing="ij")[k]
        wts *= wk.ravel()
        tk = grids[k].ravel()
        rem = np.ones(n**dim)
        for j in range(k):
            rem *= 1.0 - grids[j].ravel()
        pts_x[:, k] = tk * rem
    bary = np.column_stack([1.0 - pts_x.sum(axis=1), pts_x])
    return bary, wts * factorial(dim)


def _check_degree(degree):
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree}; supported range is 1..{MAX_DEGREE}")


@lru_cache(maxsize=None)
def tet_rule(degree: int, positive: bool = False) -> QuadRule:
    """Rule on the reference tetrahedron exact for the given total degree."""
    _check_degree(degree)
    if positive:
        points, weights = _conical_product(3, degree)
        return QuadRule(points=points, weights=weights, degree=2 * (degree // 2) + 1)
    s = (degree - 1 + 1) // 2  # 2s+1 >= degree
    points, weights = _grundmann_moller(3, s)
    return QuadRule(points=points, weights=weights, degree=2 * s + 1)


@lru_cache(maxsize=None)
def tri_rule(degree: int, positive: bool = False) -> QuadRule:
    """Rule on the reference triangle exact for the given total degree."""
    _check_degree(degree)
    if positive:
        points, weights = _conical_product(2, degree)
        return QuadRule(points=points, weights=weights, degree=2 * (degree // 2) + 1)
    s = (degree - 1 + 1) // 2
    points, weights = _grundmann_moller(2, s)
    return QuadRule(points=points, weights=weights, degree=2 * s + 1)


def integrate_tet(mesh, t, rule, f):
    """Integrate a callable of the physical point over tetrahedron t.

    f is called with an array of shape (n_points, 3) and must return
    values of shape (n_points,); scalar-only callables are handled by
    a per-point fallback.
    """
    verts = mesh.vertices[mesh.tets[t]]
    pts = rule.points @ verts
    vals = eval_at_points(f, pts)
    return float(mesh.volumes[t] * (rule.weights @ vals))


def eval_at_points(f, pts):
    """Evaluate f on an (n,3) array of points, tolerating scalar-only callables."""
    try:
        vals = np.asarray(f(pts), dtype=float)
    except Exception:
        vals = None
    if vals is None or vals.shape != (len(pts),):
        vals = np.array([float(f(p)) for p in pts])
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite value returned by integrand")
    return vals
