"""Per-BS noise-plus-weighted-channel covariance and the dual fixed point."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .network import ChannelSet, NetworkConfig


class NotPositiveDefiniteError(ValueError):
    """Covariance factorization failed even after the roundoff jitter."""


HERMITIAN_RTOL = 1e-12


@dataclass
class DualState:
    lam: np.ndarray   # per-user multiplier, flat user index
    mu: np.ndarray    # per-BS weight, sums to 1

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        if np.any(self.lam < 0) or np.any(self.mu < 0):
            raise ValueError("dual variables must be nonnegative")


class CovarianceOperator:
    """Hermitian PD matrix with a cached Cholesky factor for repeated solves."""

    def __init__(self, matrix: np.ndarray):
        scale = max(np.abs(matrix).max(), 1e-300)
        asym = np.abs(matrix - matrix.conj().T).max()
        if asym > HERMITIAN_RTOL * scale * 10:
            raise ValueError(f"matrix is not Hermitian (asymmetry {asym:.2e} at scale {scale:.2e})")
        self.matrix = 0.5 * (matrix + matrix.conj().T)
        try:
            self._factor = cho_factor(self.matrix, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = 1e-12 * np.trace(self.matrix).real / self.matrix.shape[0]
            try:
                self._factor = cho_factor(
                    self.matrix + jitter * np.eye(self.matrix.shape[0]), lower=True,
                    check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError(
                    "covariance is not positive definite (mu=0 with an empty channel sum?)"
                ) from exc

    @property
    def shape(self):
        return self.matrix.shape

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """R^{-1} rhs for a vector or an (M, k) block."""
        return cho_solve(self._factor, rhs, check_finite=False)

    def inv_quad(self, vectors: np.ndarray) -> np.ndarray:
        """Real diagonal of V^H R^{-1} V for columns V (shape (M, k) or (M,))."""
        cols = vectors if vectors.ndim == 2 else vectors[:, None]
        sol = self.solve(cols)
        out = np.real(np.sum(cols.conj() * sol, axis=0))
        return out if vectors.ndim == 2 else float(out[0])


def default_mu(config: NetworkConfig) -> np.ndarray:
    """Uniform per-BS weights mu_i = 1/J, compensated so the sum is exactly 1."""
    mu = np.full(config.J, 1.0 / config.J)
    for _ in range(3):
        defect = 1.0 - math.fsum(mu)
        if defect == 0.0:
            break
        mu[-1] += defect
    return mu


def weighted_covariance(local_h: np.ndarray, weights: np.ndarray,
                        mu_i: float, p_i: float,
                        local_err_cov: Optional[np.ndarray] = None) -> np.ndarray:
    """(mu_i/p_i) I + sum_u w_u (h_u h_u^H [+ E_u]) from one BS's local channels."""
    M = local_h.shape[1]
    R = (mu_i / p_i) * np.eye(M, dtype=complex)
    R += (local_h.T * weights) @ local_h.conj()
    if local_err_cov is not None:
        R += np.tensordot(weights, local_err_cov, axes=(0, 0))
    return R


def assemble_R(channels: ChannelSet, dual: DualState, config: NetworkConfig,
               bs: int) -> CovarianceOperator:
    """Covariance for BS `bs` from true channels; consumes only h[bs]."""
    weights = dual.lam * config.gamma_vec
    R = weighted_covariance(channels.h[bs], weights, dual.mu[bs], config.p_vec[bs])
    return CovarianceOperator(R)


def assemble_R_hat(channels: ChannelSet, dual: DualState, config: NetworkConfig,
                   bs: int) -> CovarianceOperator:
    """Imperfect-CSI covariance: estimate outer products plus error covariances."""
    if not channels.has_estimates:
        raise ValueError("assemble_R_hat needs channel estimates and error covariances")
    weights = dual.lam * config.gamma_vec
    R = weighted_covariance(channels.est[bs], weights, dual.mu[bs], config.p_vec[bs],
                            local_err_cov=channels.err_cov[bs])
    return CovarianceOperator(R)


def bs_lambda_block(local_h: np.ndarray, local_err_cov, lam: np.ndarray,
                    config: NetworkConfig, mu_i: float, bs: int) -> np.ndarray:
    """One BS's simultaneous multiplier update from its local channels.

    Returns the new lambda entries for the users this BS serves (flat order).
    This kernel is shared by the monolithic loop and the protocol agents so the
    two paths stay bit-identical.
    """
    weights = lam * config.gamma_vec
    R = weighted_covariance(local_h, weights, mu_i, config.p_vec[bs],
                            local_err_cov=local_err_cov)
    op = CovarianceOperator(R)
    serving = np.flatnonzero(config.user_cell == bs)
    quads = op.inv_quad(local_h[serving].T)           # h_u^H R^{-1} h_u per serving user
    return 1.0 / ((1.0 + config.gamma_vec[serving]) * quads)


@dataclass
class LambdaTrace:
    max_diff: list = field(default_factory=list)
    reals_per_iteration: int = 0
    converged: bool = False
    off_diag_residual: float = float("nan")

    @property
    def iterations(self):
        return len(self.max_diff)

    def rows(self):
        """CSV-ready rows: (iteration, max_diff, scalars_exchanged)."""
        return [(m + 1, d, self.reals_per_iteration) for m, d in enumerate(self.max_diff)]


def fixed_point_lambda(channels: ChannelSet, config: NetworkConfig,
                       mu: Optional[np.ndarray] = None, tol: float = 5e-4,
                       max_iter: int = 200, use_estimates: Optional[bool] = None,
                       fixed_iterations: Optional[int] = None):
    """Jacobi fixed-point iteration for the per-user multipliers.

    All entries update simultaneously from the previous iterate; one iteration
    corresponds to one exchange of n_users real scalars between BSs. With
    `fixed_iterations` the sweep count is pinned (deterministic schedules);
    otherwise the loop stops at max|lam_new - lam| <= tol.
    """
    if use_estimates is None:
        use_estimates = channels.has_estimates
    h = channels.est if use_estimates else channels.h
    err = channels.err_cov if use_estimates else None
    if mu is None:
        mu = default_mu(config)
    lam = np.ones(config.n_users)
    trace = LambdaTrace(reals_per_iteration=config.n_users)
    serving = [np.flatnonzero(config.user_cell == i) for i in range(config.J)]
    n_sweeps = fixed_iterations if fixed_iterations is not None else max_iter
    for _ in range(n_sweeps):
        new = np.empty_like(lam)
        for i in range(config.J):
            new[serving[i]] = bs_lambda_block(
                h[i], None if err is None else err[i], lam, config, mu[i], i)
        diff = float(np.max(np.abs(new - lam)))
        trace.max_diff.append(diff)
        lam = new
        if fixed_iterations is None and diff <= tol:
            trace.converged = True
            break
    else:
        trace.converged = bool(trace.max_diff and trace.max_diff[-1] <= tol)
    # diagonal condition holds by construction at convergence; log the off-diagonal
    # residual of the sufficient condition as a diagnostic only
    trace.off_diag_residual = _off_diagonal_residual(h, err, lam, config, mu)
    return DualState(lam=lam, mu=np.asarray(mu, dtype=float)), trace


def _off_diagonal_residual(h, err, lam, config, mu):
    worst = 0.0
    gamma = config.gamma_vec
    weights = lam * gamma
    for i in range(config.J):
        serving = np.flatnonzero(config.user_cell == i)
        if len(serving) < 2:
            continue
        R = weighted_covariance(h[i], weights, mu[i], config.p_vec[i],
                                local_err_cov=None if err is None else err[i])
        op = CovarianceOperator(R)
        H = h[i][serving].T
        C = H.conj().T @ op.solve(H)            # K x K cross terms
        scaled = (lam[serving] * (1.0 + gamma[serving]))[:, None] * C
        off = scaled - np.diag(np.diag(scaled))
        worst = max(worst, float(np.abs(off).max()))
    return worst
