"""Assembly of the constrained discrete system.

Produces the sparse stiffness matrix A (gradient inner products), the
element-mean constraint matrix B whose column j holds the means of the
basis functions over element j (constants -1/20, 1/5 and 32/105), the
load vector, and the vector of obstacle element means.  Dirichlet
conditions are eliminated symmetrically: fixed rows and columns are
replaced by identity and their contributions moved to the right-hand
side, which keeps the free block symmetric positive definite.

Element loops are vectorized over all elements in a fixed order, so two
assemblies of the same mesh produce bit-identical matrices.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem_space import (
    LOCAL_MEANS,
    N_LOCAL,
    DofMap,
    all_local_dofs,
    basis_grad_coeffs,
    basis_values,
)
from .mesh import TetMesh
from .quadrature import tet_rule

STIFFNESS_DEGREE = 6  # exact: bubble-gradient products are degree six
DATA_DEGREE = 8  # load, obstacle means, and error integrals


class AssemblyError(Exception):
    pass


@dataclass
class ConstrainedSystem:
    """The discrete obstacle problem after boundary elimination.

    A is N x N CSR with identity rows on Dirichlet DOFs; B is N x M CSC
    (kept column-friendly because the active-set solver extracts active
    columns each iteration) and retains its entries on Dirichlet rows;
    constraint values B^T alpha are always formed with the full
    coefficient vector, fixed entries included.
    """

    mesh: TetMesh
    dofmap: DofMap
    A: sp.csr_matrix
    B: sp.csc_matrix
    b: np.ndarray
    gamma: np.ndarray
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray  # full length, zero on free DOFs
    free: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.dofmap.size

    @property
    def n_constraints(self) -> int:
        return self.dofmap.n_tets

    def constraint_values(self, alpha) -> np.ndarray:
        """Element means B^T alpha of a full coefficient vector."""
        return self.B.T @ alpha


def _eval_on_elements(fn, pts, name, entity="element"):
    try:
        vals = np.asarray(fn(pts), dtype=float)
    except Exception:
        vals = None
    if vals is None or vals.shape != (len(pts),):
        vals = np.array([float(fn(p)) for p in pts])
    if not np.all(np.isfinite(vals)):
        bad = int(np.nonzero(~np.isfinite(vals))[0][0])
        raise AssemblyError(f"non-finite value of {name} on {entity} {bad}")
    return vals


def assemble_stiffness(mesh: TetMesh, dofmap: DofMap, degree: int = STIFFNESS_DEGREE) -> sp.csr_matrix:
    """Gradient-gradient matrix without boundary conditions."""
    rule = tet_rule(degree)
    locs = all_local_dofs(mesh, dofmap)
    glam = mesh.lambda_grads
    vols = mesh.volumes
    nt = len(mesh.tets)
    a_loc = np.zeros((nt, N_LOCAL, N_LOCAL))
    for q, w in zip(rule.points, rule.weights):
        coeff = basis_grad_coeffs(q)  # (11, 4)
        grads = np.einsum("ki,tid->tkd", coeff, glam)
        a_loc += w * np.einsum("tkd,tld->tkl", grads, grads)
    a_loc *= vols[:, None, None]
    rows = np.repeat(locs, N_LOCAL, axis=1).ravel()
    cols = np.tile(locs, (1, N_LOCAL)).ravel()
    n = dofmap.size
    return sp.coo_matrix((a_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_load(mesh: TetMesh, dofmap: DofMap, f, degree: int = DATA_DEGREE) -> np.ndarray:
    """Load vector of f against all basis functions."""
    rule = tet_rule(degree)
    locs = all_local_dofs(mesh, dofmap)
    corners = mesh.vertices[mesh.tets]
    vols = mesh.volumes
    b = np.zeros(dofmap.size)
    for q, w in zip(rule.points, rule.weights):
        pts = np.einsum("i,tid->td", q, corners)
        fv = _eval_on_elements(f, pts, "f")
        np.add.at(b, locs, (w * vols * fv)[:, None] * basis_values(q)[None, :])
    return b


def assemble_constraint(mesh: TetMesh, dofmap: DofMap) -> sp.csc_matrix:
    """Element-mean matrix: column j holds A_T(phi_i) for element j."""
    locs = all_local_dofs(mesh, dofmap)
    nt = len(mesh.tets)
    cols = np.repeat(np.arange(nt), N_LOCAL)
    data = np.tile(LOCAL_MEANS, nt)
    return sp.coo_matrix((data, (locs.ravel(), cols)), shape=(dofmap.size, nt)).tocsc()


def assemble_obstacle_means(mesh: TetMesh, chi, degree: int = DATA_DEGREE) -> np.ndarray:
    """Element means of the obstacle."""
    rule = tet_rule(degree)
    corners = mesh.vertices[mesh.tets]
    gamma = np.zeros(len(mesh.tets))
    for q, w in zip(rule.points, rule.weights):
        pts = np.einsum("i,tid->td", q, corners)
        gamma += w * _eval_on_elements(chi, pts, "chi")
    return gamma


def dirichlet_values(mesh: TetMesh, dofmap: DofMap, g) -> np.ndarray:
    """Full-length value vector: g at boundary nodes, zero elsewhere."""
    vals = np.zeros(dofmap.size)
    bv = np.nonzero(mesh.boundary_vertex)[0]
    if len(bv):
        vals[bv] = _eval_on_elements(g, mesh.vertices[bv], "g", entity="boundary node")
    be = np.nonzero(mesh.boundary_edge)[0]
    if len(be):
        vals[dofmap.edge_dof(be)] = _eval_on_elements(
            g, mesh.edge_midpoints()[be], "g", entity="boundary midpoint"
        )
    return vals


def apply_dirichlet(A: sp.csr_matrix, b: np.ndarray, mask: np.ndarray, values: np.ndarray):
    """Symmetric elimination: identity rows/cols, contributions to rhs."""
    free_d = sp.diags((~mask).astype(float))
    fixed_d = sp.diags(mask.astype(float))
    b_bc = b - A @ (values * mask)
    b_bc[mask] = values[mask]
    A_bc = (free_d @ A @ free_d + fixed_d).tocsr()
    A_bc.sum_duplicates()
    A_bc.eliminate_zeros()
    return A_bc, b_bc


def assemble(mesh: TetMesh, dofmap: DofMap, f, chi, g, data_degree: int = DATA_DEGREE) -> ConstrainedSystem:
    """Build the full constrained system for load f, obstacle chi, boundary g."""
    A = assemble_stiffness(mesh, dofmap)
    b = assemble_load(mesh, dofmap, f, degree=data_degree)
    B = assemble_constraint(mesh, dofmap)
    gamma = assemble_obstacle_means(mesh, chi, degree=data_degree)
    values = dirichlet_values(mesh, dofmap, g)
    A_bc, b_bc = apply_dirichlet(A, b, dofmap.dirichlet, values)
    return ConstrainedSystem(
        mesh=mesh,
        dofmap=dofmap,
        A=A_bc,
        B=B,
        b=b_bc,
        gamma=gamma,
        dirichlet_mask=dofmap.dirichlet.copy(),
        dirichlet_values=values,
        free=dofmap.free,
    )


def stiffness_action(A, alpha) -> np.ndarray:
    """Matrix-vector product with dimension checking."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (A.shape[1],):
        raise ValueError(f"coefficient length {alpha.shape} does not match matrix {A.shape}")
    return A @ alpha


def energy(A, alpha) -> float:
    """Quadratic form alpha^T A alpha."""
    return float(np.dot(alpha, stiffness_action(A, alpha)))


def write_matrix_market(path, mat):
    """Export a sparse matrix in Matrix Market text format."""
    from scipy.io import mmwrite

    mmwrite(str(path), mat)
