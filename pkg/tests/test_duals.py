import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_channels, manual_channels
from coordbeam.duals import (CovarianceOperator, DualState,
                             NotPositiveDefiniteError, assemble_R,
                             assemble_R_hat, bs_lambda_block, default_mu,
                             fixed_point_lambda)
from coordbeam.network import degrade_csi, perturb_other_bs


def naive_R(channels, dual, cfg, bs, use_est=False):
    """Independent double-loop summation oracle for the covariance."""
    M = cfg.M
    h = channels.est if use_est else channels.h
    R = dual.mu[bs] / cfg.p_vec[bs] * np.eye(M, dtype=complex)
    gamma = cfg.gamma_vec
    for u in range(cfg.n_users):
        hv = h[bs, u][:, None]
        R += dual.lam[u] * gamma[u] * (hv @ hv.conj().T)
        if use_est:
            R += dual.lam[u] * gamma[u] * channels.err_cov[bs, u]
    return R


def test_assemble_identity():
    cfg, channels = make_channels(J=1, K=1, M=3, p=1.0)
    dual = DualState(lam=np.zeros(1), mu=np.ones(1))
    op = assemble_R(channels, dual, cfg, 0)
    assert np.allclose(op.matrix, np.eye(3))


def test_assemble_rank_one_diag():
    h = np.zeros((1, 1, 2), dtype=complex)
    h[0, 0, 0] = 1.0
    cfg, channels = manual_channels(h, gamma=0.5, p=1.0)
    dual = DualState(lam=np.array([2.0]), mu=np.array([1.0]))
    op = assemble_R(channels, dual, cfg, 0)
    assert np.allclose(op.matrix, np.diag([2.0, 1.0]))


def test_assemble_matches_naive():
    cfg, channels = make_channels(J=2, K=2, M=4, seed=3)
    rng = np.random.default_rng(0)
    dual = DualState(lam=rng.uniform(0.1, 2.0, cfg.n_users),
                     mu=np.array([0.4, 0.6]))
    for bs in range(2):
        op = assemble_R(channels, dual, cfg, bs)
        ref = naive_R(channels, dual, cfg, bs)
        assert np.abs(op.matrix - ref).max() <= 1e-12 * np.abs(ref).max()


def test_assemble_hat_reduces_and_matches_naive():
    cfg, channels = make_channels(J=2, K=2, M=4, seed=5)
    rng = np.random.default_rng(1)
    dual = DualState(lam=rng.uniform(0.1, 2.0, cfg.n_users),
                     mu=np.array([0.5, 0.5]))
    zero = degrade_csi(channels, 0.0, seed=0)
    for bs in range(2):
        a = assemble_R_hat(zero, dual, cfg, bs)
        b = assemble_R(channels, dual, cfg, bs)
        assert np.array_equal(a.matrix, b.matrix)
    deg = degrade_csi(channels, 0.1, seed=2)
    for bs in range(2):
        op = assemble_R_hat(deg, dual, cfg, bs)
        ref = naive_R(deg, dual, cfg, bs, use_est=True)
        assert np.abs(op.matrix - ref).max() <= 1e-12 * np.abs(ref).max()
    # zero weights leave only the scaled identity, regardless of E
    dual0 = DualState(lam=np.zeros(cfg.n_users), mu=np.array([0.5, 0.5]))
    op = assemble_R_hat(deg, dual0, cfg, 0)
    assert np.allclose(op.matrix, 0.5 / cfg.p_vec[0] * np.eye(cfg.M))


def test_assemble_locality():
    cfg, channels = make_channels(J=3, K=2, M=4, seed=9)
    dual = DualState(lam=np.ones(cfg.n_users), mu=default_mu(cfg))
    base = assemble_R(channels, dual, cfg, 1).matrix
    shuffled = perturb_other_bs(channels, keep_bs=1, seed=4)
    again = assemble_R(shuffled, dual, cfg, 1).matrix
    assert np.array_equal(base, again)


def test_non_positive_definite_signalled():
    cfg, channels = make_channels(J=1, K=1, M=2)
    dual = DualState(lam=np.zeros(1), mu=np.zeros(1))
    with pytest.raises(NotPositiveDefiniteError):
        assemble_R(channels, dual, cfg, 0)


def test_covariance_operator_rejects_non_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        CovarianceOperator(np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex))


@given(st.integers(min_value=1, max_value=60))
def test_default_mu_sums_to_one(J):
    cfg = NetworkConfigStub(J)
    mu = default_mu(cfg)
    assert math.fsum(mu) == 1.0
    assert np.all(mu > 0)
    if J == 3:
        assert np.allclose(mu, 1.0 / 3.0)


class NetworkConfigStub:
    def __init__(self, J):
        self.J = J


def test_fixed_point_scalar_closed_form():
    # single user on a basis vector: update is lam <- (1 + lam)/2, fixed point 1
    h = np.zeros((1, 1, 2), dtype=complex)
    h[0, 0, 0] = 1.0
    cfg, channels = manual_channels(h, gamma=1.0, p=1.0)
    dual, trace = fixed_point_lambda(channels, cfg, mu=np.array([1.0]),
                                     tol=1e-12, max_iter=200)
    assert trace.converged
    assert abs(dual.lam[0] - 1.0) < 1e-9


def test_fixed_point_residual_and_diagonal_condition():
    cfg, channels = make_channels(J=2, K=2, M=8, seed=1)
    tol = 1e-6
    dual, trace = fixed_point_lambda(channels, cfg, tol=tol, max_iter=500)
    assert trace.converged
    # re-evaluating the update map at the fix point moves nothing beyond tol
    new = np.empty(cfg.n_users)
    for i in range(cfg.J):
        serving = np.flatnonzero(cfg.user_cell == i)
        new[serving] = bs_lambda_block(channels.h[i], None, dual.lam, cfg,
                                       dual.mu[i], i)
    assert np.max(np.abs(new - dual.lam)) <= tol
    # diagonal condition lam*(1+gamma)*h^H R^-1 h = 1 within tolerance
    for i in range(cfg.J):
        op = assemble_R(channels, dual, cfg, i)
        for u in np.flatnonzero(cfg.user_cell == i):
            q = op.inv_quad(channels.h[i, u])
            assert abs(dual.lam[u] * (1 + cfg.gamma_vec[u]) * q - 1.0) < 10 * tol


def test_fixed_point_positivity_across_iterations():
    cfg, channels = make_channels(J=2, K=3, M=8, seed=2)
    lam = np.ones(cfg.n_users)
    mu = default_mu(cfg)
    for _ in range(30):
        new = np.empty_like(lam)
        for i in range(cfg.J):
            serving = np.flatnonzero(cfg.user_cell == i)
            new[serving] = bs_lambda_block(channels.h[i], None, lam, cfg, mu[i], i)
        assert np.all(new > 0)
        lam = new


def test_fixed_point_trace_and_fixed_iterations():
    cfg, channels = make_channels(J=3, K=5, M=32, seed=0)
    dual, trace = fixed_point_lambda(channels, cfg, tol=5e-4, max_iter=100)
    assert trace.converged
    assert trace.iterations <= 60
    assert trace.reals_per_iteration == cfg.n_users == 15
    rows = trace.rows()
    assert rows[0][0] == 1 and rows[0][2] == 15
    assert np.isfinite(trace.off_diag_residual)

    pinned, ptrace = fixed_point_lambda(channels, cfg, fixed_iterations=40)
    assert ptrace.iterations == 40
    again, _ = fixed_point_lambda(channels, cfg, fixed_iterations=40)
    assert np.array_equal(pinned.lam, again.lam)


def test_fixed_point_nonconvergence_flagged():
    cfg, channels = make_channels(J=2, K=2, M=8, seed=1)
    _, trace = fixed_point_lambda(channels, cfg, tol=1e-13, max_iter=3)
    assert not trace.converged
    assert trace.iterations == 3


def test_imperfect_csi_fixed_point_uses_estimates():
    cfg, channels = make_channels(J=2, K=2, M=8, seed=6)
    deg = degrade_csi(channels, 0.3, seed=1)
    d_perfect, _ = fixed_point_lambda(channels, cfg, tol=1e-8, max_iter=400)
    d_est, _ = fixed_point_lambda(deg, cfg, tol=1e-8, max_iter=400)
    assert not np.allclose(d_perfect.lam, d_est.lam)
    zero = degrade_csi(channels, 0.0, seed=1)
    d_zero, _ = fixed_point_lambda(zero, cfg, tol=1e-8, max_iter=400)
    assert np.array_equal(d_perfect.lam, d_zero.lam)
