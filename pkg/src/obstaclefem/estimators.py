"""Discrete multiplier recovery and residual a posteriori estimators.

The piecewise-constant multiplier is computed element by element as the
bubble-weighted residual

    sigma_T = (int_T f b - int_T grad(u_h) . grad(b)) / int_T b,

which coincides with the active-set solver's multiplier values.  The
estimator has an element part (interior residual, weighted h_T^2), a
face part (normal-gradient jumps, weighted h_e), and two obstacle
terms; positive/negative parts are integrated pointwise at quadrature
nodes without resolving the sub-cell interface, consistent with the
fixed-order quadrature used everywhere else.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .fem_space import (
    BUBBLE_MEAN,
    LOCAL_MEANS,
    DofMap,
    all_local_dofs,
    basis_grad_coeffs,
    basis_laplacian_coeffs,
    basis_values,
)
from .mesh import TetMesh
from .quadrature import tet_rule, tri_rule

SIGMA_F_DEGREE = 8
SIGMA_GRAD_DEGREE = 6  # grad(u_h).grad(b) is a degree-six polynomial
FACE_DEGREE = 6
DATA_DEGREE = 8


def _eval_field(fn, pts, name="callable"):
    try:
        vals = np.asarray(fn(pts), dtype=float)
    except Exception:
        vals = None
    if vals is None or vals.shape != (len(pts),):
        vals = np.array([float(fn(p)) for p in pts])
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"non-finite value of {name}")
    return vals


def _physical_points(mesh, bary):
    """(T, 3) physical images of one barycentric point on every element."""
    return np.einsum("i,tid->td", bary, mesh.vertices[mesh.tets])


def compute_sigma_h(mesh: TetMesh, dofmap: DofMap, alpha, f) -> np.ndarray:
    """Per-element multiplier values from the bubble-weighted residual."""
    alpha = np.asarray(alpha, dtype=float)
    locs = all_local_dofs(mesh, dofmap)
    local = alpha[locs]
    glam = mesh.lambda_grads
    vols = mesh.volumes

    rule_f = tet_rule(SIGMA_F_DEGREE)
    term_f = np.zeros(len(mesh.tets))
    for q, w in zip(rule_f.points, rule_f.weights):
        pts = _physical_points(mesh, q)
        bubble = 256.0 * q[0] * q[1] * q[2] * q[3]
        term_f += w * bubble * _eval_field(f, pts, "f")
    term_f *= vols

    rule_g = tet_rule(SIGMA_GRAD_DEGREE)
    term_g = np.zeros(len(mesh.tets))
    for q, w in zip(rule_g.points, rule_g.weights):
        coeff = basis_grad_coeffs(q)  # (11, 4)
        grads = np.einsum("ki,tid->tkd", coeff, glam)  # (T, 11, 3)
        grad_u = np.einsum("tk,tkd->td", local, grads)
        grad_b = grads[:, 10, :]
        term_g += w * np.einsum("td,td->t", grad_u, grad_b)
    term_g *= vols

    return (term_f - term_g) / (BUBBLE_MEAN * vols)


def element_means_of(mesh: TetMesh, dofmap: DofMap, alpha) -> np.ndarray:
    """Element means of a discrete function, exactly via basis means."""
    locs = all_local_dofs(mesh, dofmap)
    return np.asarray(alpha)[locs] @ LOCAL_MEANS


def estimator_eta1(mesh: TetMesh, dofmap: DofMap, alpha, f, sigma_h, degree: int = DATA_DEGREE):
    """Interior residual h_T^2 ||lap(u_h) + f - sigma||^2 per element.

    The Laplacian of u_h is evaluated exactly: constant from the
    quadratic part, quadratic in the barycentric coordinates from the
    bubble part.
    """
    alpha = np.asarray(alpha, dtype=float)
    sigma_h = np.asarray(sigma_h, dtype=float)
    locs = all_local_dofs(mesh, dofmap)
    local = alpha[locs]
    glam = mesh.lambda_grads
    gram = np.einsum("tid,tjd->tij", glam, glam)
    vols = mesh.volumes

    rule = tet_rule(degree)
    acc = np.zeros(len(mesh.tets))
    for q, w in zip(rule.points, rule.weights):
        lap_coeff = basis_laplacian_coeffs(q)  # (11, 4, 4)
        lap_basis = np.einsum("kij,tij->tk", lap_coeff, gram)
        lap_u = np.einsum("tk,tk->t", local, lap_basis)
        pts = _physical_points(mesh, q)
        resid = lap_u + _eval_field(f, pts, "f") - sigma_h
        acc += w * resid**2
    per_element = mesh.diameters**2 * vols * acc
    return per_element, float(np.sqrt(per_element.sum()))


def _interior_face_arrays(mesh: TetMesh):
    fids = np.nonzero(mesh.face_tets[:, 1] >= 0)[0]
    fv = mesh.faces[fids]
    t_minus = mesh.face_tets[fids, 0]
    t_plus = mesh.face_tets[fids, 1]
    p = mesh.vertices[fv]
    cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area2 = np.linalg.norm(cross, axis=1)
    normals = cross / area2[:, None]
    areas = 0.5 * area2
    # orient each normal away from the opposite vertex of the minus tet
    tm = mesh.tets[t_minus]
    on_face = (tm[:, :, None] == fv[:, None, :]).any(axis=2)  # (F, 4)
    opp = tm[~on_face]
    flip = np.einsum("fd,fd->f", normals, mesh.vertices[opp] - p.mean(axis=1)) > 0
    normals[flip] = -normals[flip]
    h_e = np.maximum(
        np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
        np.maximum(
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
        ),
    )
    return fv, t_minus, t_plus, normals, h_e, areas


def _side_gradients(mesh, locs, alpha, tets_side, pts):
    """Gradient of the discrete function at pts (F, Q, 3) from one side."""
    glam = mesh.lambda_grads[tets_side]  # (F, 4, 3)
    v0 = mesh.vertices[mesh.tets[tets_side, 0]]  # (F, 3)
    lam = np.einsum("fqd,fid->fqi", pts - v0[:, None, :], glam)
    lam[..., 0] += 1.0
    coeff = basis_grad_coeffs(lam)  # (F, Q, 11, 4)
    grads = np.einsum("fqki,fid->fqkd", coeff, glam)
    local = alpha[locs[tets_side]]  # (F, 11)
    return np.einsum("fk,fqkd->fqd", local, grads)


def estimator_eta2(mesh: TetMesh, dofmap: DofMap, alpha, degree: int = FACE_DEGREE):
    """Normal-gradient jump h_e ||[grad u_h]||^2 per interior face.

    Bubbles vanish on faces but their normal derivatives do not, so
    both parts of the space contribute to the jump.
    """
    alpha = np.asarray(alpha, dtype=float)
    fv, t_minus, t_plus, normals, h_e, areas = _interior_face_arrays(mesh)
    if len(fv) == 0:
        return np.zeros(0), 0.0
    locs = all_local_dofs(mesh, dofmap)
    rule = tri_rule(degree)
    corners = mesh.vertices[fv]  # (F, 3, 3)
    pts = np.einsum("qi,fid->fqd", rule.points, corners)  # (F, Q, 3)
    grad_minus = _side_gradients(mesh, locs, alpha, t_minus, pts)
    grad_plus = _side_gradients(mesh, locs, alpha, t_plus, pts)
    jump = np.einsum("fqd,fd->fq", grad_minus - grad_plus, normals)
    per_face = h_e * areas * (jump**2 @ rule.weights)
    return per_face, float(np.sqrt(per_face.sum()))


def _fd_gradient(fn, pts, step):
    out = np.empty_like(pts)
    for k in range(3):
        dp = np.zeros(3)
        dp[k] = step
        out[:, k] = (_eval_field(fn, pts + dp) - _eval_field(fn, pts - dp)) / (2 * step)
    return out


def obstacle_terms(
    mesh: TetMesh,
    dofmap: DofMap,
    alpha,
    chi,
    sigma_h,
    grad_chi=None,
    degree: int = DATA_DEGREE,
    contact_tol: float = 1e-9,
):
    """Obstacle penetration terms of the estimator.

    Returns (||grad (chi - u_h)^+||^2, -sum over contact elements of
    int sigma (chi - u_h)^-).  The contact set holds the elements whose
    mean of u_h matches the mean of chi within contact_tol (absolute
    plus relative).  If grad_chi is not supplied the obstacle gradient
    is approximated by central differences.
    """
    alpha = np.asarray(alpha, dtype=float)
    sigma_h = np.asarray(sigma_h, dtype=float)
    locs = all_local_dofs(mesh, dofmap)
    local = alpha[locs]
    glam = mesh.lambda_grads
    vols = mesh.volumes
    rule = tet_rule(degree)

    if grad_chi is None:
        step = 1e-6 * max(mesh.h, 1.0)
        grad_chi = lambda pts: _fd_gradient(chi, pts, step)

    grad_pos_sq = np.zeros(len(mesh.tets))
    neg_part_int = np.zeros(len(mesh.tets))
    mean_chi = np.zeros(len(mesh.tets))
    for q, w in zip(rule.points, rule.weights):
        pts = _physical_points(mesh, q)
        chi_v = _eval_field(chi, pts, "chi")
        mean_chi += w * chi_v
        vals = basis_values(q)
        u_v = local @ vals
        gap = chi_v - u_v
        coeff = basis_grad_coeffs(q)
        grads = np.einsum("ki,tid->tkd", coeff, glam)
        grad_u = np.einsum("tk,tkd->td", local, grads)
        gchi = np.asarray(grad_chi(pts), dtype=float)
        diff = gchi - grad_u
        above = gap > 0.0
        grad_pos_sq += w * np.einsum("td,td->t", diff, diff) * above
        neg_part_int += w * np.maximum(-gap, 0.0)
    grad_pos_sq *= vols
    neg_part_int *= vols

    mean_u = local @ LOCAL_MEANS
    scale = 1.0 + np.abs(mean_u) + np.abs(mean_chi)
    contact = np.abs(mean_u - mean_chi) <= contact_tol * scale
    violation = -float((sigma_h * neg_part_int)[contact].sum())
    return float(grad_pos_sq.sum()), violation


def error_norms(mesh: TetMesh, dofmap: DofMap, alpha, exact_u, exact_grad, degree: int = DATA_DEGREE):
    """(L2 error, H1-seminorm error) against exact callables."""
    alpha = np.asarray(alpha, dtype=float)
    locs = all_local_dofs(mesh, dofmap)
    local = alpha[locs]
    glam = mesh.lambda_grads
    vols = mesh.volumes
    rule = tet_rule(degree)
    l2 = np.zeros(len(mesh.tets))
    h1 = np.zeros(len(mesh.tets))
    for q, w in zip(rule.points, rule.weights):
        pts = _physical_points(mesh, q)
        vals = basis_values(q)
        u_v = local @ vals
        coeff = basis_grad_coeffs(q)
        grads = np.einsum("ki,tid->tkd", coeff, glam)
        grad_u = np.einsum("tk,tkd->td", local, grads)
        du = _eval_field(exact_u, pts, "exact_u") - u_v
        dg = np.asarray(exact_grad(pts), dtype=float) - grad_u
        l2 += w * du**2
        h1 += w * np.einsum("td,td->t", dg, dg)
    return float(np.sqrt((vols * l2).sum())), float(np.sqrt((vols * h1).sum()))


@dataclass
class EstimatorReport:
    """Estimator contributions, totals and optional effectivity.

    estimator_total_sq = eta1^2 + eta2^2 + both obstacle terms; the
    effectivity index is the squared true error divided by that total.
    """

    eta1_total: float
    eta2_total: float
    grad_violation: float
    contact_violation: float
    per_element_eta1_sq: np.ndarray = field(repr=False, default=None)
    per_face_eta2_sq: np.ndarray = field(repr=False, default=None)
    sigma_h: np.ndarray = field(repr=False, default=None)
    true_error_h1: float = None
    effectivity: float = None

    @property
    def estimator_total_sq(self) -> float:
        return (
            self.eta1_total**2
            + self.eta2_total**2
            + self.grad_violation
            + self.contact_violation
        )

    def to_json_dict(self, per_element: bool = False) -> dict:
        out = {
            "schema_version": 1,
            "kind": "estimator_report",
            "eta1_total": self.eta1_total,
            "eta2_total": self.eta2_total,
            "grad_violation": self.grad_violation,
            "contact_violation": self.contact_violation,
            "estimator_total_sq": self.estimator_total_sq,
            "true_error_h1": self.true_error_h1,
            "effectivity": self.effectivity,
        }
        if per_element:
            out["per_element_eta1_sq"] = self.per_element_eta1_sq.tolist()
            out["per_face_eta2_sq"] = self.per_face_eta2_sq.tolist()
            out["sigma_h"] = self.sigma_h.tolist()
        return out

    def write_json(self, path, per_element: bool = False):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(per_element=per_element), fh, indent=2, sort_keys=True)
            fh.write("\n")


def estimate(
    mesh: TetMesh,
    dofmap: DofMap,
    alpha,
    f,
    chi,
    grad_chi=None,
    exact_u=None,
    exact_grad=None,
) -> EstimatorReport:
    """Assemble the full estimator report for a computed solution."""
    sigma_h = compute_sigma_h(mesh, dofmap, alpha, f)
    eta1_sq, eta1 = estimator_eta1(mesh, dofmap, alpha, f, sigma_h)
    eta2_sq, eta2 = estimator_eta2(mesh, dofmap, alpha)
    grad_viol, contact_viol = obstacle_terms(mesh, dofmap, alpha, chi, sigma_h, grad_chi=grad_chi)
    report = EstimatorReport(
        eta1_total=eta1,
        eta2_total=eta2,
        grad_violation=grad_viol,
        contact_violation=contact_viol,
        per_element_eta1_sq=eta1_sq,
        per_face_eta2_sq=eta2_sq,
        sigma_h=sigma_h,
    )
    if exact_u is not None and exact_grad is not None:
        _, h1 = error_norms(mesh, dofmap, alpha, exact_u, exact_grad)
        report.true_error_h1 = h1
        report.effectivity = h1**2 / report.estimator_total_sq
    return report
