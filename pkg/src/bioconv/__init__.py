"""Adaptive fully mixed finite element solver for stationary bioconvection.

2D coupled Navier-Stokes / microorganism-concentration system in a
first-order mixed form (trace-free velocity gradient, pseudo-stress,
concentration gradient, semi-advective flux), discretized with
Raviart-Thomas and discontinuous polynomial spaces on barycentrically
refined triangle meshes, solved by Newton with sparse direct solves, with
a residual a posteriori estimator driving Dorfler-marked adaptivity.
"""

from .adapt import AmrConfig, AmrTrace, aggregate_to_macro, amr_loop, dorfler_mark
from .estimator import IndicatorField, effectivity, global_theta, local_indicators
from .fem import (DiscreteSpaces, DofMap, ElementFamily, QuadratureRule,
                  build_dofmap, build_spaces, interpolate, quadrature_rule)
from .forms import (ModelData, SparseSystem, SystemState,
                    apply_sigtilde_normal_data, assemble_jacobian,
                    assemble_residual, eval_viscosity_profile,
                    interpolate_state)
from .mesh import (MeshHierarchy, Triangulation, barycentric_refine,
                   build_lshape, build_rectangle, load_msh, refine_marked,
                   refine_uniform_red, save_msh)
from .postproc import (ErrorRecord, compute_errors, convergence_rate,
                       hdiv_norm, lebesgue_norm, recover_pressure)
from .problems import (ProblemSpec, example1_square, example2_lshape,
                       get_problem, patch_constant, patch_rotation)
from .solver import SolveReport, SolverConfig, linear_solve, solve

__version__ = "0.1.0"

__all__ = [
    "AmrConfig", "AmrTrace", "DiscreteSpaces", "DofMap", "ElementFamily",
    "ErrorRecord", "IndicatorField", "MeshHierarchy", "ModelData",
    "ProblemSpec", "QuadratureRule", "SolveReport", "SolverConfig",
    "SparseSystem", "SystemState", "Triangulation",
    "aggregate_to_macro", "amr_loop", "apply_sigtilde_normal_data",
    "assemble_jacobian", "assemble_residual", "barycentric_refine",
    "build_dofmap", "build_lshape", "build_rectangle", "build_spaces",
    "compute_errors", "convergence_rate", "dorfler_mark", "effectivity",
    "eval_viscosity_profile", "example1_square", "example2_lshape",
    "get_problem", "global_theta", "hdiv_norm", "interpolate",
    "interpolate_state", "lebesgue_norm", "linear_solve", "load_msh",
    "local_indicators", "patch_constant", "patch_rotation",
    "quadrature_rule", "recover_pressure", "refine_marked",
    "refine_uniform_red", "save_msh", "solve",
]
