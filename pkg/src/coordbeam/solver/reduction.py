"""Dimension reduction to the per-group weight space and back."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from ..duals import CovarianceOperator
from ..network import ChannelSet, NetworkConfig


class DegenerateModelError(ValueError):
    """A user's reduced channel vanished; the instance cannot be served."""


@dataclass
class ReducedProblem:
    """Antenna-free problem data the CPU side works on.

    gram[g] is the K_g x K_g Gram matrix of the effective per-group mixing
    matrix, f[g][u] the length-K_g reduced channel from group g's transmitter
    to user u. err_quad[g][u], when present, is the K_g x K_g PSD quadratic
    form of the channel-estimation error seen by user u from group g.
    """

    gram: List[np.ndarray]
    f: List[np.ndarray]                      # f[g]: (n_users, K_g)
    gamma: np.ndarray                        # (n_users,)
    p: np.ndarray                            # per-BS budgets (J,)
    noise: np.ndarray                        # per-user noise power (n_users,)
    group_cell: np.ndarray                   # (n_groups,)
    user_group: np.ndarray                   # (n_users,)
    err_quad: Optional[List[np.ndarray]] = None   # err_quad[g]: (n_users, K_g, K_g)

    @property
    def n_groups(self):
        return len(self.gram)

    @property
    def n_users(self):
        return len(self.gamma)

    @property
    def n_cells(self):
        return len(self.p)

    @property
    def cell_groups(self):
        return [np.flatnonzero(self.group_cell == i) for i in range(self.n_cells)]

    def bs_power(self, a) -> np.ndarray:
        """Transmit power per BS for weights a (list of per-group vectors)."""
        pw = np.zeros(self.n_cells)
        for g in range(self.n_groups):
            pw[self.group_cell[g]] += float(np.real(a[g].conj() @ self.gram[g] @ a[g]))
        return pw

    def margin(self, a) -> float:
        return float(np.max(self.bs_power(a) / self.p))

    def coupling(self, a) -> np.ndarray:
        """coupling[g, u] = a_g^H f_{g,u} for every group and user."""
        return np.stack([self.f[g] @ a[g].conj() for g in range(self.n_groups)])

    def error_power(self, a) -> np.ndarray:
        """error_power[g, u] = a_g^H T_{g,u} a_g (zero when no error terms)."""
        out = np.zeros((self.n_groups, self.n_users))
        if self.err_quad is None:
            return out
        for g in range(self.n_groups):
            out[g] = np.real(np.einsum("j,ujk,k->u", a[g].conj(),
                                       self.err_quad[g], a[g]))
        return out

    def sinr(self, a) -> np.ndarray:
        """Reduced-space SINR per user (effective SINR when error terms exist)."""
        cpl = np.abs(self.coupling(a)) ** 2
        err = self.error_power(a)
        own = self.user_group
        idx = np.arange(self.n_users)
        num = cpl[own, idx]
        total = cpl.sum(axis=0) + err.sum(axis=0)
        den = total - num + self.noise
        return num / den

    def with_gamma(self, gamma):
        return replace(self, gamma=np.asarray(gamma, dtype=float))


@dataclass
class BeamformerSet:
    w: List[np.ndarray]          # per-group M-vectors
    group_cell: np.ndarray

    def per_bs_power(self) -> np.ndarray:
        n_cells = int(self.group_cell.max()) + 1
        pw = np.zeros(n_cells)
        for g, wg in enumerate(self.w):
            pw[self.group_cell[g]] += float(np.linalg.norm(wg) ** 2)
        return pw

    def stack(self) -> np.ndarray:
        return np.stack(self.w)


def bs_reduce(local_h: np.ndarray, local_err_cov, R_op: CovarianceOperator,
              config: NetworkConfig, bs: int):
    """One BS's reduction from its local channels: per-group (gram, f, err_quad).

    Shared by the monolithic reducer and the protocol agents so both paths
    produce bit-identical numbers.
    """
    out = []
    for g in np.flatnonzero(config.group_cell == bs):
        users = config.group_users(g)
        H = local_h[users].T                        # (M, K_g) serving channels
        G = R_op.solve(H)
        gm = G.conj().T @ G
        gram = 0.5 * (gm + gm.conj().T)
        fg = local_h @ G.conj()                     # (n_users, K_g)
        err = None
        if local_err_cov is not None:
            err = np.einsum("mj,umn,nk->ujk", G.conj(), local_err_cov, G)
        out.append((int(g), gram, fg, err))
    return out


def bs_reconstruct(local_h: np.ndarray, R_op: CovarianceOperator,
                   config: NetworkConfig, g: int, a_g) -> np.ndarray:
    """One group's beamformer from its BS's local channels and weights."""
    users = config.group_users(g)
    H = local_h[users].T
    return R_op.solve(H @ np.asarray(a_g, dtype=complex))


def reduce_problem(channels: ChannelSet, R: List[CovarianceOperator],
                   config: NetworkConfig, noise=None) -> ReducedProblem:
    """Project the QoS data through each BS's covariance into weight space.

    Uses channel estimates when present (the solver never touches the true
    channels in that mode) and attaches the per-user error quadratic forms.
    """
    h = channels.design_channels()
    noise_vec = np.full(config.n_users, config.sigma2) if noise is None \
        else np.asarray(noise, dtype=float)
    has_err = channels.err_cov is not None and bool(np.any(channels.err_cov))
    gram = [None] * config.n_groups
    f = [None] * config.n_groups
    err_quad = [None] * config.n_groups
    for i in range(config.J):
        local_err = channels.err_cov[i] if has_err else None
        for g, gm, fg, err in bs_reduce(h[i], local_err, R[i], config, i):
            gram[g], f[g], err_quad[g] = gm, fg, err
    for u in range(config.n_users):
        g = config.user_group[u]
        if not np.any(f[g][u]):
            raise DegenerateModelError(f"user {u}: reduced serving channel is zero")
    return ReducedProblem(gram=gram, f=f, gamma=config.gamma_vec, p=config.p_vec,
                          noise=noise_vec, group_cell=config.group_cell,
                          user_group=config.user_group,
                          err_quad=err_quad if has_err else None)


def reconstruct_beamformers(R: List[CovarianceOperator], channels: ChannelSet,
                            a, config: NetworkConfig) -> BeamformerSet:
    """w_g = R_i^{-1} H_g a_g from BS i's local channels and its own weights."""
    h = channels.design_channels()
    w = [bs_reconstruct(h[config.group_cell[g]], R[config.group_cell[g]],
                        config, g, a[g])
         for g in range(config.n_groups)]
    return BeamformerSet(w=w, group_cell=config.group_cell)


def evaluate_sinr(W: BeamformerSet, channels: ChannelSet, config: NetworkConfig,
                  noise=None) -> np.ndarray:
    """Exact per-user SINR from the true channels (all inter-group interference)."""
    noise_vec = np.full(config.n_users, config.sigma2) if noise is None \
        else np.asarray(noise, dtype=float)
    rx = np.stack([channels.h[config.group_cell[g]].conj() @ W.w[g]
                   for g in range(config.n_groups)])      # rx[g, u] = h^H w
    pw = np.abs(rx) ** 2
    own = config.user_group
    idx = np.arange(config.n_users)
    num = pw[own, idx]
    den = pw.sum(axis=0) - num + noise_vec
    return num / den


def evaluate_effective_sinr(W: BeamformerSet, channels: ChannelSet,
                            config: NetworkConfig, noise=None) -> np.ndarray:
    """Effective SINR under imperfect CSI: estimate coupling plus error power."""
    if not channels.has_estimates:
        raise ValueError("effective SINR needs channel estimates and error covariances")
    noise_vec = np.full(config.n_users, config.sigma2) if noise is None \
        else np.asarray(noise, dtype=float)
    n_groups = config.n_groups
    rx = np.stack([channels.est[config.group_cell[g]].conj() @ W.w[g]
                   for g in range(n_groups)])
    pw = np.abs(rx) ** 2
    err = np.zeros((n_groups, config.n_users))
    for g in range(n_groups):
        i = config.group_cell[g]
        err[g] = np.real(np.einsum("m,umn,n->u", W.w[g].conj(),
                                   channels.err_cov[i], W.w[g]))
    own = config.user_group
    idx = np.arange(config.n_users)
    num = pw[own, idx]
    den = pw.sum(axis=0) - num + err.sum(axis=0) + noise_vec
    return num / den


def feasibility_scale(problem: ReducedProblem, a):
    """Smallest uniform scaling of all weights meeting every SINR target.

    Returns (c, ok): with ok, scaling a by c makes the worst target exactly
    tight (c < 1 trims surplus power, c > 1 repairs small violations). ok is
    False when the direction cannot reach the targets at any power.
    """
    cpl = np.abs(problem.coupling(a)) ** 2
    err = problem.error_power(a)
    own = problem.user_group
    idx = np.arange(problem.n_users)
    num = cpl[own, idx]
    other = cpl.sum(axis=0) - num + err.sum(axis=0)
    headroom = num - problem.gamma * other
    if np.any(headroom <= 0):
        return 1.0, False
    c2 = np.max(problem.gamma * problem.noise / headroom)
    return float(np.sqrt(c2)), True
