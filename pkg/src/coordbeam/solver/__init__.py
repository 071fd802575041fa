"""Structured solver: reduction, ADMM blocks, and the two-layer loop."""

from .admm import (AdmmState, AdmmTrace, WarmStart, a_update, admm_solve_subproblem,
                   d_update, dual_update, t_update, v_update)
from .reduction import (BeamformerSet, DegenerateModelError, ReducedProblem,
                        evaluate_effective_sinr, evaluate_sinr, feasibility_scale,
                        reconstruct_beamformers, reduce_problem)
from .sca import InitResult, ScaResult, ScaTrace, initialize_u, sca_solve

__all__ = [
    "AdmmState", "AdmmTrace", "WarmStart", "a_update", "admm_solve_subproblem",
    "d_update", "dual_update", "t_update", "v_update",
    "BeamformerSet", "DegenerateModelError", "ReducedProblem",
    "evaluate_effective_sinr", "evaluate_sinr", "feasibility_scale",
    "reconstruct_beamformers", "reduce_problem",
    "InitResult", "ScaResult", "ScaTrace", "initialize_u", "sca_solve",
]
