"""Outer successive-approximation loop, initialization, and feasibility polish."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .admm import AdmmTrace, WarmStart, admm_solve_subproblem
from .reduction import ReducedProblem, feasibility_scale


@dataclass
class ScaTrace:
    objective: list = field(default_factory=list)       # margin after each outer pass
    rel_change: list = field(default_factory=list)      # expansion-point movement
    inner_iterations: list = field(default_factory=list)
    inner: List[AdmmTrace] = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.objective)

    def rows(self):
        out = []
        for i in range(self.iterations):
            out.append(("outer", i + 1, "objective", self.objective[i]))
            out.append(("outer", i + 1, "rel_change", self.rel_change[i]))
            out.append(("outer", i + 1, "inner_iterations", self.inner_iterations[i]))
        for tr in self.inner:
            out.extend(tr.rows())
        return out


@dataclass
class ScaResult:
    a: List[np.ndarray]
    objective: float              # final max power margin (after polish)
    trace: ScaTrace
    feasible: bool
    min_slack: float              # min SINR/target at the returned weights
    polish_scale: float = 1.0


@dataclass
class InitResult:
    u: List[np.ndarray]
    feasible: bool
    restarts: int
    slack: float                  # best achievable min SINR/target along the direction


def _direction_slack(problem: ReducedProblem, a) -> float:
    """Supremum over uniform scalings of the worst SINR/target ratio."""
    cpl = np.abs(problem.coupling(a)) ** 2
    err = problem.error_power(a)
    own = problem.user_group
    idx = np.arange(problem.n_users)
    num = cpl[own, idx]
    other = cpl.sum(axis=0) - num + err.sum(axis=0)
    with np.errstate(divide="ignore"):
        ratios = num / (problem.gamma * other)
    return float(np.min(ratios))


def _scaled_candidate(problem: ReducedProblem, a, slack_margin=1e-3):
    c, ok = feasibility_scale(problem, a)
    if not ok:
        return None
    return [c * np.sqrt(1.0 + slack_margin) * g for g in a]


def initialize_u(problem: ReducedProblem, seed: int, max_restarts: int = 8,
                 ones_first: bool = True) -> InitResult:
    """Find a strictly feasible expansion point for the outer loop.

    Tries the all-ones weights first, then random draws; each candidate is
    scaled so the worst SINR target holds with a small positive slack. When a
    direction cannot reach the targets at any power, a short target-relaxed
    run of the same solver machinery reshapes it before retrying. Returns the
    best-slack point flagged infeasible when everything fails.
    """
    rng = np.random.default_rng(seed)
    sizes = [problem.f[g].shape[1] for g in range(problem.n_groups)]
    best, best_slack = None, -np.inf
    for attempt in range(max_restarts + 1):
        if attempt == 0 and ones_first:
            cand = [np.ones(k, dtype=complex) for k in sizes]
        else:
            cand = [(rng.standard_normal(k) + 1j * rng.standard_normal(k))
                    / np.sqrt(2.0) for k in sizes]
        scaled = _scaled_candidate(problem, cand)
        if scaled is not None:
            return InitResult(u=scaled, feasible=True, restarts=attempt,
                              slack=_direction_slack(problem, scaled))
        slack = _direction_slack(problem, cand)
        if slack > best_slack:
            best, best_slack = cand, slack
        improved = _relax_and_improve(problem, cand, slack)
        if improved is not None:
            scaled = _scaled_candidate(problem, improved)
            if scaled is not None:
                return InitResult(u=scaled, feasible=True, restarts=attempt,
                                  slack=_direction_slack(problem, scaled))
            slack = _direction_slack(problem, improved)
            if slack > best_slack:
                best, best_slack = improved, slack
    return InitResult(u=[g.copy() for g in best], feasible=False,
                      restarts=max_restarts, slack=best_slack)


def _relax_and_improve(problem: ReducedProblem, cand, slack, rounds: int = 3):
    """Drive an infeasible direction toward the targets with relaxed copies.

    Each round solves the same problem with targets scaled down to what the
    current direction can reach, which concentrates energy on the starved
    users; stops as soon as the true targets come within reach.
    """
    if not np.isfinite(slack) or slack <= 0:
        return None
    a = cand
    for _ in range(rounds):
        relax = problem.with_gamma(problem.gamma * min(slack * 0.8, 1.0))
        start = _scaled_candidate(relax, a)
        if start is None:
            return None
        result = sca_solve(relax, start, tol_inner=1e-2, tol_outer=1e-2,
                           max_inner=300, max_outer=4, polish=False)
        a = result.a
        new_slack = _direction_slack(problem, a)
        if new_slack > 1.0:
            return a
        if new_slack <= slack * 1.01:
            return None
        slack = new_slack
    return None


def sca_solve(problem: ReducedProblem, init_u, rho: float = 0.01,
              tol_inner: float = 1e-3, tol_outer: float = 1e-3,
              max_inner: int = 4000, max_outer: int = 60,
              polish: bool = True) -> ScaResult:
    """Two-layer solve: convexify around u, solve with ADMM, move u, repeat.

    The objective trace is the true max power margin of each outer iterate
    and is non-increasing up to the inner tolerance. A final uniform scaling
    restores exact worst-target tightness (trimming surplus power or
    repairing tolerance-level violations).
    """
    u = [np.asarray(g, dtype=complex).copy() for g in init_u]
    trace = ScaTrace()
    warm: Optional[WarmStart] = None
    base_pressure = max(problem.margin(u), 1e-8)
    pressure_bumps = (1.0, 8.0, 64.0)   # stall-escalation ladder
    bump = 0
    scale = 1.0
    if polish:
        u, _, _, _ = _restore_feasibility(problem, u)
    best_margin = problem.margin(u)
    outer = 0
    while outer < max_outer:
        outer += 1
        state, inner_trace = admm_solve_subproblem(
            problem, u, rho=rho, tol=tol_inner, max_iter=max_inner, warm=warm,
            pressure=base_pressure * pressure_bumps[bump])
        a = _phase_align(state.a, u)
        dual_scale = 1.0
        stalled = False
        if polish:
            # backtrack toward the previous feasible point until the move is a
            # true descent step: keeps the objective trace non-increasing even
            # when the inner solve returns a tolerance-level perturbation
            accepted = None
            for theta in (1.0, 0.5, 0.25):
                cand = [u[g] + theta * (a[g] - u[g]) for g in range(problem.n_groups)]
                cand, m, c, ok = _restore_feasibility(problem, cand)
                if ok and m <= best_margin * (1.0 + 1e-12):
                    accepted = (cand, m)
                    dual_scale = c if theta == 1.0 else 1.0
                    break
            if accepted is None:
                stalled = True
                new_margin = best_margin
                a = u
            else:
                a, new_margin = accepted
        else:
            new_margin = problem.margin(a)
        rel = max(np.linalg.norm(a[g] - u[g]) / max(np.linalg.norm(u[g]), 1e-30)
                  for g in range(problem.n_groups))
        trace.objective.append(new_margin)
        trace.rel_change.append(float(rel))
        trace.inner_iterations.append(inner_trace.iterations)
        trace.inner.append(inner_trace)
        if stalled or (rel <= tol_outer and not inner_trace.certified):
            # no productive move: certified means this is a genuine fixed
            # point; otherwise escalate (cold duals, stronger margin pressure)
            # before accepting outer convergence
            if inner_trace.certified or bump + 1 >= len(pressure_bumps):
                break
            bump += 1
            warm = None
            continue
        warm = WarmStart(q=dual_scale * state.q,
                         r=[dual_scale * x for x in state.r],
                         z=state.z,
                         qs=None if state.qs is None else [dual_scale * x for x in state.qs],
                         pressure=base_pressure * pressure_bumps[bump])
        u = a
        best_margin = new_margin
        if rel <= tol_outer:
            break
    sinr = problem.sinr(u)
    min_slack = float(np.min(sinr / problem.gamma))
    feasible = min_slack >= 1.0 - 1e-9 if polish else min_slack >= 1.0 - 1e-3
    return ScaResult(a=u, objective=problem.margin(u), trace=trace,
                     feasible=feasible, min_slack=min_slack, polish_scale=scale)


def _phase_align(a, ref):
    """Rotate each group's weights to the phase nearest the reference.

    The problem is invariant to per-group phase rotations; aligning removes
    spurious movement from the expansion-point change metric.
    """
    out = []
    for g in range(len(a)):
        inner = np.vdot(ref[g], a[g])
        phase = inner / abs(inner) if abs(inner) > 0 else 1.0
        out.append(a[g] * np.conj(phase))
    return out


def _restore_feasibility(problem, a):
    """Uniformly scale weights to make the worst SINR target exactly tight."""
    c, ok = feasibility_scale(problem, a)
    if not ok:
        return a, problem.margin(a), 1.0, False
    scaled = [c * g for g in a]
    return scaled, problem.margin(scaled), c, True
