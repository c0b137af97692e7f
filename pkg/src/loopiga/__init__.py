"""Isogeometric Galerkin solver on closed Loop subdivision surfaces.

Solves the Laplace-Beltrami equation, the surface bi-Laplacian equation
and the associated eigenvalue problem with interchangeable quadrature
rules (Gaussian, adaptive Gaussian, barycenter, mid-edge), and ships a
harness reproducing the convergence-order experiments.
"""

__version__ = "0.1.0"

from . import errors
from .basis import (
    BasisEval,
    MidEdgeTable,
    PatchStencil,
    collect_patch,
    dump_midedge_tables,
    eval_irregular,
    eval_regular,
    limit_position,
    midedge_table,
)
from .assembly import (
    GeometrySample,
    assemble_mass,
    assemble_midedge,
    assemble_rhs,
    assemble_stiffness_bilaplace,
    assemble_stiffness_laplace,
    geometry_sample,
    save_matrix_market,
)
from .harness import (
    ErrorReport,
    StudyConfig,
    eoc,
    error_norms,
    generate_spherical_3_4,
    generate_spherical_5_12,
    generate_torus,
    prolong,
    run_study,
    write_vtk,
)
from .quadrature import (
    QuadratureRule,
    adaptive_rule,
    barycenter_rule,
    gauss_rule,
    midedge_rule,
    parse_rule_spec,
)
from .solve import (
    ConstrainedSystem,
    EigenResult,
    SolverTelemetry,
    consistency_error,
    eigen_solve,
    solve_zero_mean,
)
from .topology import (
    ControlMesh,
    SubdivisionConfig,
    beta,
    build_mesh,
    has_adjacent_EVs,
    loop_subdivide,
    mesh_size_h,
    read_obj,
    subdivide,
    write_obj,
)
