"""glmlab: time-filtered general linear methods.

Construction of filtered time-stepping methods, order-condition checking,
linear stability analysis (wedge angles, axis radii, region rasters),
stability optimization of filter coefficients, and ODE integration with
embedded error estimation and energy monitoring.
"""

from . import catalog, filters, integrate, optimize, order, problems, stability, tableau
from .catalog import CatalogEntry, get, get_parametric, list_entries
from .filters import (CoreMethod, PostFilter, PreFilter, apply_filters, filter_lmm,
                      fluctuation_factor, is_reducing)
from .integrate import (SolveConfig, SolutionRecord, StepFailure, bootstrap_history,
                        embedded_error_estimate, energy_check, integrate as run,
                        observed_order, step)
from .optimize import (FreeMask, OptimizationProblem, OptimizationResult,
                       OptimizerConfig, optimize_filters, verify_result)
from .order import OrderResidualReport, order_of, order_report, tau_residuals
from .problems import OdeProblem, problem_from_name
from .stability import (PoleError, ScanConfig, StabilityReport, a_alpha_angle,
                        axis_stability_radius, evolution_matrix, full_report,
                        is_L_stable, region_raster, satisfies_root_condition,
                        spectral_radius)
from .tableau import (BlockGlm, CompactGlm, ConsistencyReport, GlmTableau,
                      StepOffsets, StructureError, abscissas, drop_passive_stages,
                      lift_steps, load_method, save_method, to_compact, validate)

__version__ = "0.1.0"
