"""Grid toolkit for Dirichlet problems of the complex Monge-Ampere equation.

Modules
-------
grid            domains, boundary data, field files
calculus        discrete complex Hessian, determinants, masses, linearisation
geometry        reference forms, densities, discrepancy and blow-up checks
solver          damped Newton, continuity path, s-family, subsolutions
pluripotential  extremal functions, capacity, comparison, sublevel statistics
singular        solutions with logarithmic poles
expr, config    expression grammar and run configuration
reports, cli    report writing and the command-line front end
"""
__version__ = "0.1.0"

from .grid import (BoundaryData, DomainError, DomainMask, GridSpec, build_domain,  # noqa: F401
                   extend_boundary_data, inward_band, load_field, save_field)
from .calculus import complex_hessian, ma_density, ma_mass, psh_check  # noqa: F401
from .geometry import (DensitySpec, ReferenceForms, build_reference_forms,  # noqa: F401
                       klt_discrepancy, regularized_density)
from .solver import (SolveConfig, SolveReport, continuity_path, find_subsolution,  # noqa: F401
                     newton_solve, s_family_limit, verify_subsolution)
from .pluripotential import (CapacityQuery, capacity, check_comparison,  # noqa: F401
                             degiorgi_bound, extremal_function, sublevel_stats)
from .singular import PoleSpec, solve_log_pole, verify_asymptotics  # noqa: F401
