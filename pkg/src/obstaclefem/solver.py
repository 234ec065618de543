"""Primal-dual active-set solver for the element-mean obstacle problem.

Each outer iteration classifies elements by the sign of
beta + c*(B^T alpha - gamma), then solves the equality-constrained
problem: the energy is minimized subject to the mean constraints of the
active elements, with multipliers set to zero elsewhere.  Termination
is by active-set equality; revisiting an earlier set without
terminating is reported as non-convergence (cycling).

The inner solve eliminates every bubble unknown exactly: on an active
element the mean constraint determines the bubble coefficient from the
element's quadratic DOFs, and on an inactive element the bubble's own
equilibrium row does (the bubble-bubble stiffness block is diagonal
because bubbles of distinct elements never overlap).  What remains is a
symmetric positive definite system on the free quadratic DOFs, solved
directly when small and by AMG-preconditioned conjugate gradients when
large.  Multipliers are recovered from the bubble rows, scaled so that
beta_j is the value of the piecewise-constant multiplier field on
element j.
"""

import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import ConstrainedSystem
from .fem_space import BUBBLE_MEAN, FeFunction

DIRECT_SOLVE_MAX_DOFS = 12000


class SolverError(Exception):
    pass


@dataclass
class SolverConfig:
    """Active-set and inner-solver parameters.

    c scales the complementarity indicator in the classification step;
    any positive value has the same fixed points.  init selects the
    starting iterate: "unconstrained" solves the unconstrained problem
    first, "zero" starts from boundary data only.
    """

    c: float = 1.0
    max_iterations: int = 60
    linear_tol: float = 1e-11
    init: str = "unconstrained"
    cg_max_iter: int = 1500
    progress_log: bool = True

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("complementarity scaling c must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.init not in ("unconstrained", "zero"):
            raise ValueError(f"unknown initialization mode {self.init!r}")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    comp_inf: float
    active_count: int
    message: str = ""
    inner: list = field(default_factory=list)


def complementarity_residual(system: ConstrainedSystem, alpha, beta, c) -> np.ndarray:
    """C(alpha, beta) = beta - min(0, beta + c (B^T alpha - gamma)).

    Zero exactly when the discrete complementarity conditions hold:
    beta <= 0, B^T alpha >= gamma, and componentwise inactivity of one
    factor.  The zero set does not depend on c > 0.
    """
    if c <= 0:
        raise ValueError("complementarity scaling c must be positive")
    d = system.constraint_values(alpha) - system.gamma
    return beta - np.minimum(0.0, beta + c * d)


class _Workspace:
    """Block splitting of the system, reused across active-set iterations."""

    def __init__(self, system: ConstrainedSystem):
        dofmap = system.dofmap
        n_p2 = dofmap.n_vertices + dofmap.n_edges
        self.bubble_ids = np.arange(n_p2, dofmap.size)
        free = system.free
        self.free_p2 = free[free < n_p2]
        A = system.A
        self.A_pp = A[self.free_p2][:, self.free_p2].tocsr()
        self.A_pb = A[self.free_p2][:, self.bubble_ids].tocsr()
        self.A_bp = self.A_pb.T.tocsr()
        self.A_bb = A.diagonal()[self.bubble_ids]
        if np.any(self.A_bb <= 0):
            raise SolverError("non-positive bubble diagonal; mesh is degenerate")
        self.b_p = system.b[self.free_p2]
        self.b_b = system.b[self.bubble_ids]
        # constraint restricted to free quadratic DOFs, and the fixed part
        self.B_p = system.B[self.free_p2, :].tocsc()
        fixed_vals = system.dirichlet_values * system.dirichlet_mask
        self.fixed_constraint = system.B.T @ fixed_vals
        self.bubble_integral = BUBBLE_MEAN * system.mesh.volumes


def _elimination(system, ws, active_mask):
    """Affine map bubble = g + G x over the free quadratic DOFs x."""
    act = active_mask.astype(float)
    inact = 1.0 - act
    g = np.where(
        active_mask,
        (system.gamma - ws.fixed_constraint) / BUBBLE_MEAN,
        ws.b_b / ws.A_bb,
    )
    d_act = sp.diags(act / BUBBLE_MEAN)
    d_inact = sp.diags(inact / ws.A_bb)
    G = -(d_act @ ws.B_p.T + d_inact @ ws.A_bp)
    return g, G.tocsr()


def _spd_solve(K, r, ws, config, x0, n_active):
    if K.shape[0] == 0:
        return np.zeros(0), "empty", 0.0
    target = config.linear_tol * (1.0 + np.linalg.norm(r))
    if K.shape[0] <= DIRECT_SOLVE_MAX_DOFS:
        try:
            x = spla.splu(K.tocsc()).solve(r)
        except RuntimeError as exc:
            raise SolverError(
                f"singular reduced system with {n_active} active constraints: {exc}"
            ) from exc
        return x, "direct", float(np.linalg.norm(K @ x - r))
    import pyamg

    # the reduced matrix changes with the active set, so the hierarchy is
    # rebuilt every solve; setup is a small fraction of the solve cost
    ml = pyamg.smoothed_aggregation_solver(K.tocsr())
    prec = ml.aspreconditioner(cycle="V")
    try:
        x, info = spla.cg(K, r, x0=x0, M=prec, maxiter=config.cg_max_iter, rtol=0.0, atol=target)
    except TypeError:  # scipy < 1.12 spells the relative tolerance "tol"
        x, info = spla.cg(K, r, x0=x0, M=prec, maxiter=config.cg_max_iter, tol=0.0, atol=target)
    res = float(np.linalg.norm(K @ x - r))
    if info == 0 and res <= target:
        return x, "amg_cg", res
    raise SolverError(
        f"inner conjugate-gradient solve stalled with {n_active} active constraints "
        f"(residual {res:.3e}, target {target:.3e})"
    )


def step2_solve(system: ConstrainedSystem, active_set, config: SolverConfig = None, _ws=None, _x0=None):
    """Solve the equality-constrained problem for one active set.

    Minimizes the discrete energy subject to element-mean equality on
    the active elements; multipliers of inactive elements are zero.
    Returns (alpha, beta) where beta holds per-element multiplier field
    values, recovered from the bubble rows of the solved system.
    """
    config = config or SolverConfig()
    ws = _ws or _Workspace(system)
    m = system.n_constraints
    active = np.asarray(active_set, dtype=np.int64)
    if len(active):
        if active.min() < 0 or active.max() >= m:
            raise SolverError(f"active element id out of range (m={m})")
        if len(np.unique(active)) != len(active):
            raise SolverError(
                f"rank-deficient constraint block: duplicate entries in active set of size {len(active)}"
            )
    active_mask = np.zeros(m, dtype=bool)
    active_mask[active] = True

    g, G = _elimination(system, ws, active_mask)
    A_bb = sp.diags(ws.A_bb)
    K = (ws.A_pp + ws.A_pb @ G + G.T @ ws.A_bp + G.T @ A_bb @ G).tocsr()
    r = ws.b_p + G.T @ ws.b_b - ws.A_pb @ g - G.T @ (ws.A_bb * g)

    x0 = _x0[ws.free_p2] if _x0 is not None else None
    x, kind, res = _spd_solve(K, r, ws, config, x0, len(active))

    alpha = system.dirichlet_values * system.dirichlet_mask
    alpha[ws.free_p2] = x
    alpha[ws.bubble_ids] = g + G @ x

    beta = np.zeros(m)
    if len(active):
        bubble_residual = ws.b_b - (system.A @ alpha)[ws.bubble_ids]
        beta[active] = bubble_residual[active] / ws.bubble_integral[active]
    return alpha, beta, {"kind": kind, "residual": res, "active": len(active)}


def system_residual(system: ConstrainedSystem, alpha, beta) -> float:
    """Norm of the solved equations over free DOFs.

    The multiplier pairs against basis integrals, so the multiplier
    column is B with each column scaled by the element volume.
    """
    col = system.B @ (system.mesh.volumes * beta)
    res = system.A @ alpha + col - system.b
    return float(np.linalg.norm(res[system.free]))


def pdas_solve(system: ConstrainedSystem, config: SolverConfig = None):
    """Run the primal-dual active-set iteration to set convergence.

    Returns (FeFunction, beta, SolveReport).  Non-convergence (either
    the iteration budget or a detected cycle) is reported on the
    SolveReport rather than raised, with the last iterate attached.
    """
    config = config or SolverConfig()
    ws = _Workspace(system)
    m = system.n_constraints

    beta = np.zeros(m)
    if config.init == "unconstrained":
        alpha, beta, _ = step2_solve(system, np.empty(0, dtype=np.int64), config, _ws=ws)
    else:
        alpha = system.dirichlet_values * system.dirichlet_mask

    converged = False
    message = ""
    iterations = 0
    inner_stats = []
    prev_active = None
    history = []
    active = np.empty(0, dtype=np.int64)
    while iterations < config.max_iterations:
        d = system.constraint_values(alpha) - system.gamma
        active = np.nonzero(beta + config.c * d < 0.0)[0]
        key = active.tobytes()
        if prev_active is not None and key == prev_active:
            converged = True
            break
        if key in history:
            message = f"cycling detected: active set of size {len(active)} revisited"
            break
        history.append(key)
        history = history[-10:]
        alpha, beta, stats = step2_solve(system, active, config, _ws=ws, _x0=alpha)
        prev_active = key
        iterations += 1
        if config.progress_log:
            comp = float(np.abs(complementarity_residual(system, alpha, beta, config.c)).max()) if m else 0.0
            print(
                f"pdas_iter={iterations} active={len(active)} comp_inf={comp:.6e}",
                file=sys.stderr,
            )
        inner_stats.append(stats)

    comp_vec = complementarity_residual(system, alpha, beta, config.c) if m else np.zeros(0)
    comp_inf = float(np.abs(comp_vec).max()) if m else 0.0
    if not converged and not message:
        message = f"iteration budget {config.max_iterations} exhausted"
    report = SolveReport(
        converged=converged,
        iterations=iterations,
        comp_inf=comp_inf,
        active_count=int(len(active)),
        message=message if not converged else "",
        inner=inner_stats,
    )
    return FeFunction(dofmap=system.dofmap, coeffs=alpha), beta, report
