"""End-to-end QoS solve: duals, reduction, weight optimization, reconstruction.

The three stages mirror the BS/CPU split of the distributed protocol; both the
monolithic entry point here and the message-passing run in `protocol` call the
same stage functions, so their outputs are bit-identical for equal settings.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .duals import (CovarianceOperator, DualState, LambdaTrace, default_mu,
                    fixed_point_lambda, weighted_covariance)
from .network import ChannelSet, NetworkConfig
from .solver import (BeamformerSet, InitResult, ScaResult, ScaTrace,
                     evaluate_effective_sinr, evaluate_sinr, initialize_u,
                     reconstruct_beamformers, reduce_problem, sca_solve)


@dataclass
class SolverSettings:
    rho: float = 0.01
    tol_inner: float = 1e-3
    tol_outer: float = 1e-3
    max_inner: int = 4000
    max_outer: int = 60
    lambda_tol: float = 5e-4
    lambda_max_iter: int = 200
    lambda_fixed_iterations: Optional[int] = None   # pin the dual sweep count
    init_seed: int = 0
    init_restarts: int = 8
    n_starts: int = 2            # independent weight-solve starts, best kept
    mu: Optional[np.ndarray] = None

    def with_overrides(self, overrides: dict) -> "SolverSettings":
        known = {k: v for k, v in overrides.items() if hasattr(self, k)}
        unknown = set(overrides) - set(known)
        if unknown:
            raise ValueError(f"unknown solver setting: {sorted(unknown)[0]}")
        return replace(self, **known)


@dataclass
class SolveResult:
    beamformers: BeamformerSet
    weights: List[np.ndarray]
    margin: float                       # max_i ||w_i||^2 / p_i
    sinr: np.ndarray                    # true-channel SINR per user
    effective_sinr: Optional[np.ndarray]
    dual: DualState
    dual_value: float                   # sigma^2 * lam . gamma, diagnostic only
    lambda_trace: LambdaTrace
    sca: ScaResult
    init: InitResult
    feasible: bool
    stage_seconds: dict = field(default_factory=dict)

    @property
    def margin_db(self):
        return 10.0 * np.log10(self.margin)


def build_covariances(channels: ChannelSet, dual: DualState,
                      config: NetworkConfig) -> List[CovarianceOperator]:
    """Per-BS covariance operators at the given duals (estimates when present)."""
    h = channels.design_channels()
    err = channels.err_cov
    weights = dual.lam * config.gamma_vec
    ops = []
    for i in range(config.J):
        R = weighted_covariance(h[i], weights, dual.mu[i], config.p_vec[i],
                                local_err_cov=None if err is None else err[i])
        ops.append(CovarianceOperator(R))
    return ops


def stage1_reduce(channels: ChannelSet, config: NetworkConfig,
                  settings: SolverSettings, noise=None):
    """BS-side work: dual fixed point, covariance assembly, reduction."""
    mu = settings.mu if settings.mu is not None else default_mu(config)
    dual, lam_trace = fixed_point_lambda(
        channels, config, mu=mu, tol=settings.lambda_tol,
        max_iter=settings.lambda_max_iter,
        fixed_iterations=settings.lambda_fixed_iterations)
    R = build_covariances(channels, dual, config)
    problem = reduce_problem(channels, R, config, noise=noise)
    return dual, lam_trace, R, problem


def stage2_weights(problem, settings: SolverSettings):
    """CPU-side work: initialization plus the two-layer weight solve.

    Runs up to n_starts independent starts (the multicast problem is
    non-convex, so stationary points vary) and keeps the lowest margin.
    """
    init = initialize_u(problem, seed=settings.init_seed,
                        max_restarts=settings.init_restarts)
    best = None
    for start in range(max(1, settings.n_starts)):
        cur = init if start == 0 else initialize_u(
            problem, seed=settings.init_seed + 7919 * start,
            max_restarts=settings.init_restarts, ones_first=False)
        if start > 0 and not cur.feasible:
            continue
        sca = sca_solve(problem, cur.u, rho=settings.rho,
                        tol_inner=settings.tol_inner, tol_outer=settings.tol_outer,
                        max_inner=settings.max_inner, max_outer=settings.max_outer)
        if (best is None or (sca.feasible, -sca.objective)
                > (best[1].feasible, -best[1].objective)):
            best = (cur, sca)
        if not cur.feasible:
            break
    return best


def stage3_beamformers(R, channels: ChannelSet, weights,
                       config: NetworkConfig) -> BeamformerSet:
    """BS-side reconstruction of the final beamformers from local data."""
    return reconstruct_beamformers(R, channels, weights, config)


def solve_qos(channels: ChannelSet, config: NetworkConfig,
              settings: Optional[SolverSettings] = None,
              noise=None) -> SolveResult:
    """Full monolithic solve of the min-max power-margin QoS problem.

    `noise` optionally replaces the common receiver noise with a per-user
    vector (used by experiments that fold uncoordinated interference into the
    noise floor). Imperfect-CSI mode engages automatically when `channels`
    carries estimates.
    """
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    dual, lam_trace, R, problem = stage1_reduce(channels, config, settings, noise=noise)
    t1 = time.perf_counter()
    init, sca = stage2_weights(problem, settings)
    t2 = time.perf_counter()
    W = stage3_beamformers(R, channels, sca.a, config)
    t3 = time.perf_counter()
    sinr = evaluate_sinr(W, channels, config, noise=noise)
    eff = (evaluate_effective_sinr(W, channels, config, noise=noise)
           if channels.has_estimates else None)
    margin = float(np.max(W.per_bs_power() / config.p_vec))
    return SolveResult(
        beamformers=W, weights=sca.a, margin=margin, sinr=sinr,
        effective_sinr=eff, dual=dual,
        dual_value=float(config.sigma2 * dual.lam @ config.gamma_vec),
        lambda_trace=lam_trace, sca=sca, init=init,
        feasible=sca.feasible and init.feasible,
        stage_seconds={"stage1": t1 - t0, "stage2": t2 - t1, "stage3": t3 - t2},
    )
