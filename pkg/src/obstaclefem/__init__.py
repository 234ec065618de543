"""Bubble-enriched quadratic finite elements for the 3D obstacle problem.

The package builds conforming tetrahedral meshes of boxes, assembles
the quadratic-plus-bubble discretization with element-mean obstacle
constraints, solves it with a primal-dual active-set iteration,
recovers the piecewise-constant multiplier, and evaluates residual a
posteriori error estimators.  A CLI drives a manufactured benchmark
with a spherical free boundary.
"""

from .assembly import (
    ConstrainedSystem,
    assemble,
    assemble_constraint,
    assemble_load,
    assemble_obstacle_means,
    assemble_stiffness,
    energy,
    stiffness_action,
    write_matrix_market,
)
from .benchmark import (
    BenchmarkProblem,
    ConvergenceRow,
    benchmark_f,
    run_convergence_study,
    solve_level,
)
from .estimators import (
    EstimatorReport,
    compute_sigma_h,
    error_norms,
    estimate,
    estimator_eta1,
    estimator_eta2,
    obstacle_terms,
)
from .fem_space import (
    BasisValue,
    DofMap,
    FeFunction,
    build_dofmap,
    element_means,
    eval_basis,
    eval_function,
    interpolate,
)
from .mesh import (
    ElementGeometry,
    MeshError,
    TetMesh,
    build_box_mesh,
    element_geometry,
    interior_faces,
    uniform_refine,
    write_vtk,
)
from .quadrature import QuadRule, integrate_tet, tet_rule, tri_rule
from .solver import (
    SolveReport,
    SolverConfig,
    SolverError,
    complementarity_residual,
    pdas_solve,
    step2_solve,
)

__version__ = "0.1.0"
