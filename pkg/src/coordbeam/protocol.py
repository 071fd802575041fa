"""Semi-distributed BS/CPU execution with exact fronthaul accounting.

Agents are in-process state machines driven by a deterministic scheduler;
every scalar that would cross the fronthaul is recorded on a ledger. The
computation kernels are shared with the monolithic pipeline, so for equal
settings the distributed run returns bit-identical beamformers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .duals import CovarianceOperator, DualState, bs_lambda_block, default_mu, \
    weighted_covariance
from .network import ChannelSet, NetworkConfig
from .pipeline import SolveResult, SolverSettings, solve_qos, stage2_weights
from .solver import BeamformerSet, evaluate_sinr
from .solver.reduction import ReducedProblem, bs_reconstruct, bs_reduce, \
    DegenerateModelError

CPU = "cpu"
BROADCAST = "broadcast"

KIND_LAMBDA = "LambdaBroadcast"
KIND_GRAM = "GramUpload"
KIND_REDUCED = "ReducedChannelsUpload"
KIND_WEIGHTS = "WeightsDownload"


@dataclass
class Message:
    sender: str
    receiver: str
    kind: str
    payload: np.ndarray
    scalar_count: tuple            # (complex_count, real_count)

    def __post_init__(self):
        expected = int(np.asarray(self.payload).size)
        if sum(self.scalar_count) != expected:
            raise ValueError(f"scalar_count {self.scalar_count} does not match "
                             f"payload size {expected}")


@dataclass
class FronthaulLedger:
    """Totals of scalars exchanged between BSs and the CPU, by kind/direction."""

    complex_by_kind: Dict[str, int] = field(default_factory=dict)
    real_by_kind: Dict[str, int] = field(default_factory=dict)
    complex_by_direction: Dict[str, int] = field(default_factory=dict)
    real_by_direction: Dict[str, int] = field(default_factory=dict)
    messages: int = 0
    lambda_iterations: int = 0

    def record(self, msg: Message):
        c, r = msg.scalar_count
        direction = ("uplink" if msg.receiver == CPU
                     else "downlink" if msg.sender == CPU else "lateral")
        self.complex_by_kind[msg.kind] = self.complex_by_kind.get(msg.kind, 0) + c
        self.real_by_kind[msg.kind] = self.real_by_kind.get(msg.kind, 0) + r
        self.complex_by_direction[direction] = \
            self.complex_by_direction.get(direction, 0) + c
        self.real_by_direction[direction] = \
            self.real_by_direction.get(direction, 0) + r
        self.messages += 1

    @property
    def stage1_reals(self):
        return self.real_by_kind.get(KIND_LAMBDA, 0)

    @property
    def stage23_complex(self):
        return sum(c for kind, c in self.complex_by_kind.items()
                   if kind != KIND_LAMBDA)

    @property
    def total_complex_equivalent(self):
        """All traffic in complex-scalar units (two reals count as one)."""
        return (sum(self.complex_by_kind.values())
                + sum(self.real_by_kind.values()) / 2.0)

    def rows(self):
        kinds = sorted(set(self.complex_by_kind) | set(self.real_by_kind))
        return [(k, self.complex_by_kind.get(k, 0), self.real_by_kind.get(k, 0))
                for k in kinds]


class BSAgent:
    """Holds exactly one BS's local channels; never sees other BSs' raw CSI."""

    def __init__(self, bs: int, local_h: np.ndarray, local_err_cov,
                 config: NetworkConfig, mu_i: float):
        self.bs = bs
        self.local_h = local_h
        self.local_err_cov = local_err_cov
        self.config = config
        self.mu_i = mu_i
        self.lam = np.ones(config.n_users)
        self.serving = np.flatnonzero(config.user_cell == bs)
        self.R: Optional[CovarianceOperator] = None
        self.weights: Dict[int, np.ndarray] = {}

    def lambda_sweep(self) -> Message:
        block = bs_lambda_block(self.local_h, self.local_err_cov, self.lam,
                                self.config, self.mu_i, self.bs)
        return Message(sender=f"bs{self.bs}", receiver=BROADCAST,
                       kind=KIND_LAMBDA, payload=block,
                       scalar_count=(0, block.size))

    def receive_lambda(self, sender_bs: int, payload: np.ndarray):
        serving = np.flatnonzero(self.config.user_cell == sender_bs)
        self.lam[serving] = payload

    def finalize_covariance(self):
        weights = self.lam * self.config.gamma_vec
        R = weighted_covariance(self.local_h, weights, self.mu_i,
                                self.config.p_vec[self.bs],
                                local_err_cov=self.local_err_cov)
        self.R = CovarianceOperator(R)

    def upload_reduction(self) -> List[Message]:
        msgs = []
        for g, gram, fg, err in bs_reduce(self.local_h, self.local_err_cov,
                                          self.R, self.config, self.bs):
            msgs.append(Message(
                sender=f"bs{self.bs}", receiver=CPU, kind=KIND_GRAM,
                payload=gram, scalar_count=(gram.size, 0)))
            if err is None:
                payload = fg
            else:
                payload = np.concatenate([fg.ravel(), err.ravel()])
            msgs.append(Message(
                sender=f"bs{self.bs}", receiver=CPU, kind=KIND_REDUCED,
                payload=payload, scalar_count=(payload.size, 0)))
        return msgs

    def receive_weights(self, g: int, a_g: np.ndarray):
        self.weights[g] = a_g

    def reconstruct(self) -> Dict[int, np.ndarray]:
        return {g: bs_reconstruct(self.local_h, self.R, self.config, g, a_g)
                for g, a_g in self.weights.items()}


class CPUAgent:
    """Aggregates the uploaded reduction and runs the weight optimization."""

    def __init__(self, config: NetworkConfig, settings: SolverSettings, noise=None):
        self.config = config
        self.settings = settings
        self.noise = noise
        self.gram: Dict[int, np.ndarray] = {}
        self.f: Dict[int, np.ndarray] = {}
        self.err: Dict[int, np.ndarray] = {}
        self._group_iter: Dict[str, int] = {}

    def receive(self, msg: Message):
        sender_bs = int(msg.sender[2:])
        groups = np.flatnonzero(self.config.group_cell == sender_bs)
        if msg.kind == KIND_GRAM:
            idx = self._next(msg.sender + msg.kind, groups)
            self.gram[idx] = msg.payload
        elif msg.kind == KIND_REDUCED:
            idx = self._next(msg.sender + msg.kind, groups)
            k = self.config.group_sizes[idx]
            n = self.config.n_users
            flat = np.asarray(msg.payload).ravel()
            self.f[idx] = flat[:n * k].reshape(n, k)
            if flat.size > n * k:
                self.err[idx] = flat[n * k:].reshape(n, k, k)

    def _next(self, key, groups):
        i = self._group_iter.get(key, 0)
        self._group_iter[key] = i + 1
        return int(groups[i])

    def solve(self):
        n_groups = self.config.n_groups
        noise_vec = (np.full(self.config.n_users, self.config.sigma2)
                     if self.noise is None else np.asarray(self.noise, dtype=float))
        err = [self.err[g] for g in range(n_groups)] if self.err else None
        problem = ReducedProblem(
            gram=[self.gram[g] for g in range(n_groups)],
            f=[self.f[g] for g in range(n_groups)],
            gamma=self.config.gamma_vec, p=self.config.p_vec, noise=noise_vec,
            group_cell=self.config.group_cell, user_group=self.config.user_group,
            err_quad=err)
        for u in range(self.config.n_users):
            if not np.any(self.f[self.config.user_group[u]][u]):
                raise DegenerateModelError(f"user {u}: reduced serving channel is zero")
        init, sca = stage2_weights(problem, self.settings)
        return init, sca

    def weight_messages(self, a) -> List[Message]:
        msgs = []
        for g in range(self.config.n_groups):
            bs = self.config.group_cell[g]
            msgs.append(Message(sender=CPU, receiver=f"bs{bs}",
                                kind=KIND_WEIGHTS, payload=np.asarray(a[g]),
                                scalar_count=(len(a[g]), 0)))
        return msgs


def run_distributed(channels: ChannelSet, config: NetworkConfig,
                    settings: Optional[SolverSettings] = None, noise=None,
                    message_tap: Optional[Callable[[Message], Message]] = None):
    """Execute the three-stage protocol with explicit messages and a ledger.

    Stage I: each BS iterates the dual fixed point on local CSI, broadcasting
    its multiplier block each sweep. Stage II: BSs upload their Gram matrices
    and reduced channels; the CPU solves for the weights. Stage III: the CPU
    downloads each group's weights and BSs rebuild their beamformers locally.

    The dual sweep count is pinned (settings.lambda_fixed_iterations, default
    100 sweeps) so the schedule and the ledger are independent of the antenna
    count; pass a tolerance-based count via settings to mirror the adaptive
    monolithic mode instead. Returns (BeamformerSet, FronthaulLedger, extras).
    """
    settings = settings or SolverSettings()
    ledger = FronthaulLedger()
    tap = message_tap or (lambda m: m)

    def deliver(msg: Message) -> Message:
        msg = tap(msg)
        ledger.record(msg)
        return msg

    mu = settings.mu if settings.mu is not None else default_mu(config)
    h = channels.design_channels()
    has_err = channels.err_cov is not None and bool(np.any(channels.err_cov))
    agents = [BSAgent(i, h[i], channels.err_cov[i] if has_err else None,
                      config, mu[i]) for i in range(config.J)]

    # Stage I: fixed dual sweep schedule, one broadcast per BS per sweep
    sweeps = (settings.lambda_fixed_iterations
              if settings.lambda_fixed_iterations is not None else 100)
    for _ in range(sweeps):
        blocks = [deliver(agent.lambda_sweep()) for agent in agents]
        for agent in agents:
            for i, msg in enumerate(blocks):
                agent.receive_lambda(i, msg.payload)
    ledger.lambda_iterations = sweeps
    for agent in agents:
        agent.finalize_covariance()

    # Stage II: upload reductions, CPU solves for the weights
    cpu = CPUAgent(config, settings, noise=noise)
    for agent in agents:
        for msg in agent.upload_reduction():
            cpu.receive(deliver(msg))
    init, sca = cpu.solve()

    # Stage III: download weights, BSs reconstruct locally
    for msg in cpu.weight_messages(sca.a):
        bs = int(msg.receiver[2:])
        groups = np.flatnonzero(config.group_cell == bs)
        done = [g for g in groups if g in agents[bs].weights]
        g = int([g for g in groups if g not in done][0])
        agents[bs].receive_weights(g, deliver(msg).payload)
    w = [None] * config.n_groups
    for agent in agents:
        for g, wg in agent.reconstruct().items():
            w[g] = wg
    W = BeamformerSet(w=w, group_cell=config.group_cell)
    lam = np.empty(config.n_users)
    for agent in agents:
        lam[agent.serving] = agent.lam[agent.serving]
    extras = {"init": init, "sca": sca,
              "dual": DualState(lam=lam, mu=np.asarray(mu, dtype=float))}
    return W, ledger, extras


def centralized_overhead(config: NetworkConfig) -> int:
    """Complex scalars for full CSI upload: every BS sends all user channels."""
    return int(config.M * config.n_users * config.J)


def compare_runs(channels: ChannelSet, config: NetworkConfig,
                 settings: Optional[SolverSettings] = None, noise=None,
                 message_tap: Optional[Callable[[Message], Message]] = None):
    """Run the monolithic and distributed pipelines on identical inputs.

    Returns a dict with the max absolute beamformer difference (exactly zero
    under the deterministic shared-kernel schedule), the ledger, and both
    results. A message_tap can corrupt payloads to exercise the detector.
    """
    settings = settings or SolverSettings()
    if settings.lambda_fixed_iterations is None:
        settings = settings.with_overrides({"lambda_fixed_iterations": 100})
    mono = solve_qos(channels, config, settings, noise=noise)
    W, ledger, extras = run_distributed(channels, config, settings, noise=noise,
                                        message_tap=message_tap)
    diff = max(float(np.abs(W.w[g] - mono.beamformers.w[g]).max())
               for g in range(config.n_groups))
    sinr = evaluate_sinr(W, channels, config, noise=noise)
    return {"max_beamformer_diff": diff, "ledger": ledger,
            "monolithic": mono, "distributed": (W, extras), "sinr": sinr}
