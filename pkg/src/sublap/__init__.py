"""sublap: a numerical laboratory for -Lap u = a(x) u^q with sign-changing a."""

from .domain import (
    DIRICHLET,
    NEUMANN,
    BoundaryCondition,
    Grid,
    Line,
    Radial,
    ScalarField,
    apply_laplacian,
    build_grid,
    constant_field,
    integrate,
    sample,
    unit_sphere_area,
    zero_field,
)
from .linalg import (
    EigenPair,
    linearized_eigenvalue,
    operator_norm_S,
    principal_eigenpair,
    solve_poisson,
)

__version__ = "0.1.0"
