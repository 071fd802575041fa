"""Small-scale reference solvers used by the test suite.

Deliberately algorithm-independent from the production solver: the convex
subproblems are solved by a log-barrier interior method on the real
parametrization, and the single-constraint quadratic programs by a dual
scalar search. Agreement between these and the structured solver is the
evidence the tests rely on; nothing here is fast or large-scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

from .network import ChannelSet, NetworkConfig
from .solver.reduction import BeamformerSet, ReducedProblem


@dataclass
class Quadratic:
    """x^H A x - 2 Re(b^H x) + c with A Hermitian PSD."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def value(self, x):
        return float(np.real(x.conj() @ self.A @ x - 2 * np.real(self.b.conj() @ x) + self.c))

    def gradient_zero(self, ridge=None):
        A = self.A if ridge is None else self.A + ridge
        return np.linalg.solve(A, self.b)


@dataclass
class ConvexSolveReport:
    value: float
    x: object
    max_violation: float
    iterations: int
    multipliers: dict = field(default_factory=dict)
    stationarity: float = float("nan")
    feasible: bool = True


def oracle_qcqp1(objective: Quadratic, constraint: Quadratic,
                 tol: float = 1e-9) -> ConvexSolveReport:
    """Minimize a strictly convex quadratic under one convex quadratic constraint.

    Dual scalar search: for each multiplier the inner minimizer is a linear
    solve; the constraint value is monotone in the multiplier, so the active
    case reduces to a bracketed scalar root.
    """
    x0 = objective.gradient_zero()
    g0 = constraint.value(x0)
    scale = max(1.0, abs(constraint.c))
    if g0 <= tol * scale:
        grad = objective.A @ x0 - objective.b
        return ConvexSolveReport(value=objective.value(x0), x=x0,
                                 max_violation=max(g0, 0.0), iterations=1,
                                 multipliers={"nu": 0.0},
                                 stationarity=float(np.linalg.norm(grad)))

    def solve(nu):
        return np.linalg.solve(objective.A + nu * constraint.A,
                               objective.b + nu * constraint.b)

    def conval(nu):
        return constraint.value(solve(nu))

    hi = 1.0
    for _ in range(200):
        if conval(hi) <= 0:
            break
        hi *= 2.0
    else:
        return ConvexSolveReport(value=np.inf, x=x0, max_violation=g0,
                                 iterations=200, feasible=False)
    nu = brentq(conval, 0.0, hi, xtol=1e-15, rtol=8.9e-16, maxiter=300)
    x = solve(nu)
    grad = (objective.A @ x - objective.b) + nu * (constraint.A @ x - constraint.b)
    return ConvexSolveReport(value=objective.value(x), x=x,
                             max_violation=max(constraint.value(x), 0.0),
                             iterations=2, multipliers={"nu": float(nu)},
                             stationarity=float(np.linalg.norm(grad)))


# -- generic convexified QoS instance ----------------------------------------

@dataclass
class SurrogateInstance:
    """Shared shape of the full-dimension and reduced convex subproblems.

    Transmitter g reaches user u through coupling vector C[g][u]; its power is
    x_g^H P_g x_g, charged to BS `cell[g]`. The SINR numerator is convexified
    around the expansion point (z_g vectors of matching dimension).
    """

    C: List[np.ndarray]          # C[g]: (n_users, dim_g)
    P: List[np.ndarray]          # P[g]: (dim_g, dim_g) Hermitian PSD
    cell: np.ndarray             # transmitter -> BS index
    user_group: np.ndarray       # user -> serving transmitter
    gamma: np.ndarray
    noise: np.ndarray
    p: np.ndarray

    @property
    def n_groups(self):
        return len(self.C)

    @property
    def n_users(self):
        return len(self.gamma)

    @property
    def dims(self):
        return [c.shape[1] for c in self.C]

    def margin(self, x):
        pw = np.zeros(len(self.p))
        for g in range(self.n_groups):
            pw[self.cell[g]] += float(np.real(x[g].conj() @ self.P[g] @ x[g]))
        return float(np.max(pw / self.p))

    def sinr(self, x):
        cpl = np.stack([np.abs(self.C[g] @ x[g].conj()) ** 2
                        for g in range(self.n_groups)])
        idx = np.arange(self.n_users)
        num = cpl[self.user_group, idx]
        den = cpl.sum(axis=0) - num + self.noise
        return num / den


def reduced_instance(problem: ReducedProblem) -> SurrogateInstance:
    return SurrogateInstance(C=problem.f, P=problem.gram,
                             cell=problem.group_cell, user_group=problem.user_group,
                             gamma=problem.gamma, noise=problem.noise, p=problem.p)


def full_instance(channels: ChannelSet, config: NetworkConfig,
                  noise=None) -> SurrogateInstance:
    h = channels.design_channels()
    noise_vec = np.full(config.n_users, config.sigma2) if noise is None \
        else np.asarray(noise, dtype=float)
    C = [h[config.group_cell[g]] for g in range(config.n_groups)]
    P = [np.eye(config.M, dtype=complex) for _ in range(config.n_groups)]
    return SurrogateInstance(C=C, P=P, cell=config.group_cell,
                             user_group=config.user_group, gamma=config.gamma_vec,
                             noise=noise_vec, p=config.p_vec)


class _RealQuadratic:
    """xi^T A xi + b^T xi + c over the stacked real parametrization plus t."""

    def __init__(self, n):
        self.A = np.zeros((n, n))
        self.b = np.zeros(n)
        self.c = 0.0

    def value(self, xi):
        return float(xi @ self.A @ xi + self.b @ xi + self.c)

    def grad(self, xi):
        return 2.0 * (self.A @ xi) + self.b

    def hess(self):
        return 2.0 * self.A


def _coupling_rows(c):
    """Real/imag rows so that x^H c = r1.xi + i r2.xi on [Re x; Im x]."""
    r1 = np.concatenate([c.real, c.imag])
    r2 = np.concatenate([c.imag, -c.real])
    return r1, r2


def _hermitian_real(P):
    return np.block([[P.real, -P.imag], [P.imag, P.real]])


def _build_constraints(inst: SurrogateInstance, expansion):
    dims = inst.dims
    offsets = np.concatenate([[0], np.cumsum([2 * d for d in dims])])
    n = int(offsets[-1]) + 1          # trailing slot is t
    t_slot = n - 1
    cons = []
    for u in range(inst.n_users):
        g = inst.user_group[u]
        q = _RealQuadratic(n)
        for l in range(inst.n_groups):
            if l == g:
                continue
            r1, r2 = _coupling_rows(inst.C[l][u])
            sl = slice(offsets[l], offsets[l + 1])
            q.A[sl, sl] += inst.gamma[u] * (np.outer(r1, r1) + np.outer(r2, r2))
        cu = inst.C[g][u]
        s = np.vdot(expansion[g], cu)             # z^H c
        r1, r2 = _coupling_rows(cu)
        sl = slice(offsets[g], offsets[g + 1])
        # -2 Re{(x^H c)(c^H z)} = -2 Re{(x^H c) conj(s)}
        q.b[sl] += -2.0 * (r1 * s.real + r2 * s.imag)
        q.c += abs(s) ** 2 + inst.gamma[u] * inst.noise[u]
        cons.append(q)
    for i in range(len(inst.p)):
        q = _RealQuadratic(n)
        for g in range(inst.n_groups):
            if inst.cell[g] != i:
                continue
            sl = slice(offsets[g], offsets[g + 1])
            q.A[sl, sl] += _hermitian_real(inst.P[g]) / inst.p[i]
        q.b[t_slot] = -1.0
        cons.append(q)
    return cons, offsets, t_slot


def _pack(inst, x, t):
    return np.concatenate([np.concatenate([xg.real, xg.imag]) for xg in x] + [[t]])


def _unpack(inst, xi):
    out = []
    o = 0
    for d in inst.dims:
        out.append(xi[o:o + d] + 1j * xi[o + d:o + 2 * d])
        o += 2 * d
    return out, float(xi[-1])


def oracle_sca_subproblem(inst: SurrogateInstance, expansion,
                          tol: float = 1e-9, max_newton: int = 400) -> ConvexSolveReport:
    """Log-barrier interior method for one convexified QoS subproblem.

    The expansion point must be strictly feasible for the SINR surrogates
    (any point satisfying the original targets strictly qualifies); reports
    infeasibility with the worst violation otherwise.
    """
    expansion = [np.asarray(z, dtype=complex) for z in expansion]
    cons, offsets, t_slot = _build_constraints(inst, expansion)
    xi = _pack(inst, expansion, 0.0)
    sinr_slacks = [q.value(xi) for q in cons[:inst.n_users]]
    worst = max(sinr_slacks)
    if worst >= 0:
        return ConvexSolveReport(value=np.inf, x=expansion, max_violation=worst,
                                 iterations=0, feasible=False)
    xi[t_slot] = inst.margin(expansion) * 1.5 + 1.0
    m = len(cons)
    theta = max(1.0, 1.0 / max(abs(xi[t_slot]), 1e-6))
    newton_steps = 0

    def barrier_value(xi, theta):
        vals = [q.value(xi) for q in cons]
        if max(vals) >= 0:
            return np.inf
        return theta * xi[t_slot] - sum(np.log(-v) for v in vals)

    def barrier_grad_hess(xi, theta):
        grad = np.zeros_like(xi)
        grad[t_slot] = theta
        hess = np.zeros((len(xi), len(xi)))
        for q in cons:
            g = q.value(xi)
            dg = q.grad(xi)
            grad += dg / (-g)
            hess += np.outer(dg, dg) / g ** 2 + q.hess() / (-g)
        return grad, hess

    while m / theta > tol:
        theta *= 20.0
        for _ in range(max_newton):
            newton_steps += 1
            grad, hess = barrier_grad_hess(xi, theta)
            try:
                step = np.linalg.solve(hess, -grad)
            except np.linalg.LinAlgError:
                hess += 1e-10 * np.trace(hess) / len(xi) * np.eye(len(xi))
                step = np.linalg.solve(hess, -grad)
            decrement = float(-grad @ step)
            if decrement / 2 <= 1e-11:
                break
            base = barrier_value(xi, theta)
            alpha = 1.0
            for _ in range(100):
                cand = xi + alpha * step
                if barrier_value(cand, theta) <= base - 0.25 * alpha * decrement:
                    break
                alpha *= 0.5
            else:
                break
            xi = xi + alpha * step

    x, t = _unpack(inst, xi)
    mults = np.array([1.0 / (theta * (-q.value(xi))) for q in cons])
    grad = np.zeros_like(xi)
    grad[t_slot] = 1.0
    for q, nu in zip(cons, mults):
        grad += nu * q.grad(xi)
    violation = max(max(q.value(xi) for q in cons), 0.0)
    return ConvexSolveReport(value=t, x=x, max_violation=violation,
                             iterations=newton_steps,
                             multipliers={"constraints": mults},
                             stationarity=float(np.linalg.norm(grad)))


def feasible_full_init(channels: ChannelSet, config: NetworkConfig, seed: int = 0,
                       noise=None, max_restarts: int = 30):
    """Strictly feasible beamformers for the full-dimension problem.

    Scaled per-group channel-sum directions first, then random draws.
    Returns (list of per-group M-vectors, feasible_flag).
    """
    inst = full_instance(channels, config, noise=noise)
    rng = np.random.default_rng(seed)
    h = channels.design_channels()
    for attempt in range(max_restarts + 1):
        if attempt == 0:
            cand = []
            for g in range(config.n_groups):
                users = config.group_users(g)
                cand.append(h[config.group_cell[g]][users].sum(axis=0))
        else:
            cand = [(rng.standard_normal(config.M) + 1j * rng.standard_normal(config.M))
                    / np.sqrt(2) for _ in range(config.n_groups)]
        scaled = _scale_full(inst, cand)
        if scaled is not None:
            return scaled, True
    return cand, False


def _scale_full(inst: SurrogateInstance, x, slack=1e-3):
    cpl = np.stack([np.abs(inst.C[g] @ np.asarray(x[g]).conj()) ** 2
                    for g in range(inst.n_groups)])
    idx = np.arange(inst.n_users)
    num = cpl[inst.user_group, idx]
    other = cpl.sum(axis=0) - num
    headroom = num - inst.gamma * other
    if np.any(headroom <= 0):
        return None
    c2 = np.max(inst.gamma * inst.noise / headroom) * (1 + slack)
    return [np.sqrt(c2) * np.asarray(g, dtype=complex) for g in x]


def oracle_direct_sca(channels: ChannelSet, config: NetworkConfig, init_w,
                      tol: float = 1e-4, max_iter: int = 60,
                      noise=None):
    """Full-dimension successive approximation using the barrier subsolver.

    Returns (BeamformerSet, margin, objective trace). init_w must be strictly
    feasible (see feasible_full_init).
    """
    inst = full_instance(channels, config, noise=noise)
    z = [np.asarray(w, dtype=complex).copy() for w in init_w]
    trace = []
    prev = inst.margin(z)
    for _ in range(max_iter):
        report = oracle_sca_subproblem(inst, z)
        if not report.feasible:
            raise RuntimeError(f"subproblem infeasible (violation {report.max_violation:.3e})")
        x = report.x
        rel = max(np.linalg.norm(x[g] - z[g]) / max(np.linalg.norm(z[g]), 1e-30)
                  for g in range(inst.n_groups))
        z = x
        cur = inst.margin(z)
        trace.append(cur)
        if rel <= tol or abs(prev - cur) <= tol * max(prev, 1e-30):
            break
        prev = cur
    scaled = _scale_full(inst, z, slack=0.0)
    if scaled is not None:
        z = scaled
    W = BeamformerSet(w=z, group_cell=config.group_cell)
    return W, inst.margin(z), trace
