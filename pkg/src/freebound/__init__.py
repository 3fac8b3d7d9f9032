"""Numerical laboratory for shape optimization with an elliptic state
constraint and the free boundaries it produces.

Modules:
    grid       structured grids, implicit domains, sub-cell quadrature
    elliptic   cut-cell Dirichlet Poisson solver
    analytic   closed-form data fields and perturbation vector fields
    calculus   shape energies and first/second variations
    optimize   level-set gradient descent and regularity diagnostics
    blowup     Weiss monotonicity and boundary-point classification
    cones      homogeneous cone solutions and their stability forms
    cli        text-config driven command-line front end
"""

from .analytic import AnalyticScalar, BumpField, FlowMap, rotation_generator
from .blowup import (
    BoundaryPointReport,
    WeissTrace,
    classify_boundary,
    halfplane_fit,
    reference_grid,
    rescale,
    weiss_trace,
)
from .calculus import (
    ProblemData,
    energy_Ef,
    energy_F,
    energy_G,
    first_variation,
    first_variation_forms,
    one_phase_variations,
    second_variation,
    solve_state_pair,
)
from .cones import (
    ConeSpec,
    NoSolution,
    RayleighReport,
    cap_eigenmodes,
    cjk_form,
    cross_check_delta2G,
    mean_curvature,
    solve_cap,
)
from .elliptic import (
    DirichletOperator,
    DirichletProblem,
    DivFormProblem,
    solve_dirichlet,
    solve_divform,
)
from .errors import FreeboundError
from .grid import (
    BallRegion,
    DomainRep,
    Grid,
    ScalarField,
    integrate_domain,
    read_fld1,
    volume,
    write_fld1,
)
from .optimize import (
    DiagnosticsReport,
    OptimizeConfig,
    OptTrace,
    diagnostics,
    minimality_probe,
    optimize,
    reinitialize,
)

__version__ = "0.1.0"
