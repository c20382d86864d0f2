"""Isoparametric finite elements on stationary and evolving closed surfaces."""

__version__ = "0.1.0"

from .surfaces import (  # noqa: F401
    Circle,
    ClosestPointResult,
    EllipsoidFlow,
    ScaledSphereFlow,
    Sphere,
    Torus,
    exact_heat_solution,
    forcing_profile,
    make_surface,
)
from .meshing import (  # noqa: F401
    SurfaceMesh,
    build_circle_mesh,
    build_sphere_mesh,
    evolve_mesh,
    quasi_uniformity_report,
)
from .fem import (  # noqa: F401
    DISCRETE,
    LIFTED,
    FeFunction,
    FeSpace,
    assemble_mass,
    assemble_stiffness,
    compute_prefactors,
    discrete_delta,
    discrete_laplacian,
    interpolate,
    l2_project,
    lift_function,
    inverse_lift_function,
    norm_lq,
    norm_w1q,
    ritz_project,
)
from .sparse import SparseMatrix, SolveReport, cg_solve  # noqa: F401
from .timestepping import (  # noqa: F401
    TimeGrid,
    Trajectory,
    solve_scheme_a,
    solve_scheme_b,
    solve_stationary,
    spacetime_norm,
)
from .greens import (  # noqa: F401
    DecayFit,
    delta_consistency,
    discrete_green,
    dyadic_report,
    green_decay_study,
    kernel_difference_l1,
    smallest_nonzero_eigenvalue,
)
from .studies import (  # noqa: F401
    StudyConfig,
    StudyReport,
    convergence_study,
    emit_reports,
    inequality_suite,
    maxreg_study,
)
