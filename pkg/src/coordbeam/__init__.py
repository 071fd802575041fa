"""Coordinated multicast beamforming for multi-cell massive MIMO downlinks.

Structured weight-space solver built on the per-BS covariance reduction, a
semi-distributed BS/CPU protocol with exact fronthaul accounting, reference
convex solvers for testing, and a seeded experiment harness.
"""

from .duals import (CovarianceOperator, DualState, LambdaTrace,
                    NotPositiveDefiniteError, assemble_R, assemble_R_hat,
                    default_mu, fixed_point_lambda)
from .network import (ChannelSet, NetworkConfig, ScenarioError, UserLayout,
                      degrade_csi, generate_channels, generate_layout,
                      hex_bs_positions, link_gains, load_scenario)
from .pipeline import SolveResult, SolverSettings, solve_qos
from .protocol import (FronthaulLedger, Message, centralized_overhead,
                       compare_runs, run_distributed)
from .solver import (AdmmState, BeamformerSet, ReducedProblem, ScaResult,
                     a_update, admm_solve_subproblem, d_update, dual_update,
                     evaluate_effective_sinr, evaluate_sinr, initialize_u,
                     reconstruct_beamformers, reduce_problem, sca_solve,
                     t_update, v_update)

__version__ = "0.1.0"

__all__ = [
    "CovarianceOperator", "DualState", "LambdaTrace", "NotPositiveDefiniteError",
    "assemble_R", "assemble_R_hat", "default_mu", "fixed_point_lambda",
    "ChannelSet", "NetworkConfig", "ScenarioError", "UserLayout",
    "degrade_csi", "generate_channels", "generate_layout", "hex_bs_positions",
    "link_gains", "load_scenario",
    "SolveResult", "SolverSettings", "solve_qos",
    "FronthaulLedger", "Message", "centralized_overhead", "compare_runs",
    "run_distributed",
    "AdmmState", "BeamformerSet", "ReducedProblem", "ScaResult",
    "a_update", "admm_solve_subproblem", "d_update", "dual_update",
    "evaluate_effective_sinr", "evaluate_sinr", "initialize_u",
    "reconstruct_beamformers", "reduce_problem", "sca_solve",
    "t_update", "v_update",
    "__version__",
]
