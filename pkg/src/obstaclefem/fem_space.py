"""The quadratic space enriched with one quartic bubble per element.

Local basis on a tetrahedron, in this fixed order:

  0..3   vertex functions      l_i (2 l_i - 1)
  4..9   edge functions        4 l_a l_b   for edges 01,02,03,12,13,23
  10     bubble                256 l_0 l_1 l_2 l_3

Global degrees of freedom are laid out [vertices | edge midpoints |
bubbles].  The bubble vanishes on all four faces and equals one at the
barycenter; its element mean is 32/105, while vertex and edge functions
have means -1/20 and 1/5 (so constraining element means requires the
bubble: the ten quadratic means alone cannot produce a sign guarantee).
"""

from dataclasses import dataclass

import numpy as np

from .mesh import EDGE_VERTICES, TetMesh, element_geometry
from .quadrature import eval_at_points, tet_rule

N_LOCAL = 11

# element means of the local basis functions, constant on every tet
VERTEX_MEAN = -1.0 / 20.0
EDGE_MEAN = 1.0 / 5.0
BUBBLE_MEAN = 32.0 / 105.0
LOCAL_MEANS = np.array([VERTEX_MEAN] * 4 + [EDGE_MEAN] * 6 + [BUBBLE_MEAN])


@dataclass(frozen=True)
class DofMap:
    """Global DOF enumeration with Dirichlet mask.

    Layout: vertex i -> i, edge e -> n_vertices + e, bubble of tet t ->
    n_vertices + n_edges + t.  Bubbles are never Dirichlet.
    """

    n_vertices: int
    n_edges: int
    n_tets: int
    dirichlet: np.ndarray  # bool mask over all DOFs

    @property
    def size(self) -> int:
        return self.n_vertices + self.n_edges + self.n_tets

    def edge_dof(self, e):
        return self.n_vertices + e

    def bubble_dof(self, t):
        return self.n_vertices + self.n_edges + t

    @property
    def free(self):
        return np.nonzero(~self.dirichlet)[0]


def build_dofmap(mesh: TetMesh) -> DofMap:
    """Enumerate DOFs and mask boundary vertices and edge midpoints."""
    mask = np.zeros(len(mesh.vertices) + len(mesh.edges) + len(mesh.tets), dtype=bool)
    mask[: len(mesh.vertices)] = mesh.boundary_vertex
    mask[len(mesh.vertices) : len(mesh.vertices) + len(mesh.edges)] = mesh.boundary_edge
    return DofMap(
        n_vertices=len(mesh.vertices),
        n_edges=len(mesh.edges),
        n_tets=len(mesh.tets),
        dirichlet=mask,
    )


def local_dofs(mesh: TetMesh, dofmap: DofMap, t) -> np.ndarray:
    """Global DOF ids of the 11 local basis functions of tet t."""
    return np.concatenate(
        [mesh.tets[t], dofmap.edge_dof(mesh.tet_edges[t]), [dofmap.bubble_dof(t)]]
    )


def all_local_dofs(mesh: TetMesh, dofmap: DofMap) -> np.ndarray:
    """(T, 11) global DOF ids for every element."""
    nt = len(mesh.tets)
    out = np.empty((nt, N_LOCAL), dtype=np.int64)
    out[:, :4] = mesh.tets
    out[:, 4:10] = dofmap.edge_dof(mesh.tet_edges)
    out[:, 10] = dofmap.bubble_dof(np.arange(nt))
    return out


@dataclass(frozen=True)
class BasisValue:
    """Values and physical gradients of the 11 local functions at a point."""

    values: np.ndarray  # (11,)
    gradients: np.ndarray  # (11, 3)


@dataclass(frozen=True)
class FeFunction:
    """Coefficient vector over a DofMap."""

    dofmap: DofMap
    coeffs: np.ndarray

    def __post_init__(self):
        if len(self.coeffs) != self.dofmap.size:
            raise ValueError("coefficient length does not match DOF count")


def basis_values(bary) -> np.ndarray:
    """Values of the 11 local functions at barycentric points (..., 4)."""
    lam = np.asarray(bary, dtype=float)
    vals = np.empty(lam.shape[:-1] + (N_LOCAL,))
    for i in range(4):
        vals[..., i] = lam[..., i] * (2.0 * lam[..., i] - 1.0)
    for k, (a, b) in enumerate(EDGE_VERTICES):
        vals[..., 4 + k] = 4.0 * lam[..., a] * lam[..., b]
    vals[..., 10] = 256.0 * lam[..., 0] * lam[..., 1] * lam[..., 2] * lam[..., 3]
    return vals


def basis_grad_coeffs(bary) -> np.ndarray:
    """Partial derivatives w.r.t. the four barycentric coordinates.

    Returns shape (..., 11, 4); the physical gradient of function k is
    sum_i coeffs[..., k, i] * grad(lambda_i).
    """
    lam = np.asarray(bary, dtype=float)
    out = np.zeros(lam.shape[:-1] + (N_LOCAL, 4))
    for i in range(4):
        out[..., i, i] = 4.0 * lam[..., i] - 1.0
    for k, (a, b) in enumerate(EDGE_VERTICES):
        out[..., 4 + k, a] = 4.0 * lam[..., b]
        out[..., 4 + k, b] = 4.0 * lam[..., a]
    for i in range(4):
        others = [j for j in range(4) if j != i]
        out[..., 10, i] = 256.0 * lam[..., others[0]] * lam[..., others[1]] * lam[..., others[2]]
    return out


def basis_laplacian_coeffs(bary) -> np.ndarray:
    """Second-derivative coefficients w.r.t. barycentric coordinate pairs.

    Returns (..., 11, 4, 4); the physical Laplacian of function k is
    sum_ij coeffs[..., k, i, j] * grad(lambda_i) . grad(lambda_j).
    """
    lam = np.asarray(bary, dtype=float)
    out = np.zeros(lam.shape[:-1] + (N_LOCAL, 4, 4))
    for i in range(4):
        out[..., i, i, i] = 4.0
    for k, (a, b) in enumerate(EDGE_VERTICES):
        out[..., 4 + k, a, b] = 4.0
        out[..., 4 + k, b, a] = 4.0
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            others = [r for r in range(4) if r not in (i, j)]
            out[..., 10, i, j] = 256.0 * lam[..., others[0]] * lam[..., others[1]]
    return out


def eval_basis(geom, bary) -> BasisValue:
    """Local basis values and physical gradients at one barycentric point."""
    lam = np.asarray(bary, dtype=float)
    vals = basis_values(lam)
    grads = basis_grad_coeffs(lam) @ geom.lambda_grads
    return BasisValue(values=vals, gradients=grads)


def element_means(geom=None) -> np.ndarray:
    """Element means of the 11 local basis functions (shape independent)."""
    return LOCAL_MEANS.copy()


def interpolate(mesh: TetMesh, dofmap: DofMap, v, v_means=None, mean_degree: int = 8) -> FeFunction:
    """Mean-preserving interpolation onto the enriched space.

    Vertex and midpoint coefficients are point values of v; the bubble
    coefficient on each element is chosen so the element mean of the
    interpolant equals the element mean of v.  When v_means is not
    supplied the means are computed with the degree-`mean_degree` rule.
    """
    coeffs = np.empty(dofmap.size)
    coeffs[: dofmap.n_vertices] = eval_at_points(v, mesh.vertices)
    coeffs[dofmap.n_vertices : dofmap.n_vertices + dofmap.n_edges] = eval_at_points(
        v, mesh.edge_midpoints()
    )
    if v_means is None:
        rule = tet_rule(mean_degree)
        corners = mesh.vertices[mesh.tets]
        means = np.zeros(len(mesh.tets))
        for q, w in zip(rule.points, rule.weights):
            means += w * eval_at_points(v, np.einsum("i,tid->td", q, corners))
    else:
        means = np.asarray(v_means, dtype=float)
    locs = all_local_dofs(mesh, dofmap)
    p2_means = coeffs[locs[:, :10]] @ LOCAL_MEANS[:10]
    coeffs[dofmap.n_vertices + dofmap.n_edges :] = (means - p2_means) / BUBBLE_MEAN
    return FeFunction(dofmap=dofmap, coeffs=coeffs)


def eval_function(mesh: TetMesh, dofmap: DofMap, alpha, t, bary):
    """Value and physical gradient of a coefficient vector at (t, bary)."""
    alpha = np.asarray(alpha, dtype=float)
    local = alpha[local_dofs(mesh, dofmap, t)]
    bv = eval_basis(element_geometry(mesh, t), bary)
    return float(local @ bv.values), local @ bv.gradients
