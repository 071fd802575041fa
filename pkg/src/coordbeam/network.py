"""Network scenarios: cell geometry, pathloss, channel draws, imperfect CSI."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import yaml


class ScenarioError(ValueError):
    """Invalid scenario configuration; message names the offending field."""


def _as_vector(value, n, name):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise ScenarioError(f"{name}: expected scalar or length-{n} sequence, got shape {arr.shape}")
    return arr


@dataclass
class NetworkConfig:
    """Static description of a coordinated multi-cell multicast scenario.

    One multicast group per cell is the default; `groups_per_cell` lists the
    group sizes of every cell for the multi-group case (e.g. [[3, 2], [5]]).
    """

    J: int                       # coordinating cells / BSs
    K: int                       # users per group (one-group default)
    M: int                       # BS antennas
    p: object = 10.0             # per-BS power budget [W], scalar or per-BS
    gamma: object = 10.0         # per-user SINR target (linear), scalar or per-user
    sigma2: float = 1.0          # receiver noise power [W]
    pathloss_exponent: float = 3.5
    cell_radius: float = 1.0
    boundary_snr_db: float = -5.0   # calibrates xi0 unless xi0 given explicitly
    xi0: Optional[float] = None
    groups_per_cell: Optional[Sequence[Sequence[int]]] = None
    min_distance_frac: float = 1e-3  # BS-user distance clamp, fraction of cell radius

    def __post_init__(self):
        if self.groups_per_cell is None:
            self.groups_per_cell = [[self.K] for _ in range(self.J)]
        self.groups_per_cell = [list(g) for g in self.groups_per_cell]
        self.validate()

    # -- flattened indexing ------------------------------------------------
    @property
    def group_sizes(self):
        return np.array([k for cell in self.groups_per_cell for k in cell], dtype=int)

    @property
    def group_cell(self):
        return np.array([i for i, cell in enumerate(self.groups_per_cell)
                         for _ in cell], dtype=int)

    @property
    def n_groups(self):
        return int(len(self.group_sizes))

    @property
    def n_users(self):
        return int(self.group_sizes.sum())

    @property
    def group_start(self):
        """Offset of each group's first user in the flat user index."""
        return np.concatenate([[0], np.cumsum(self.group_sizes)[:-1]])

    @property
    def user_group(self):
        return np.repeat(np.arange(self.n_groups), self.group_sizes)

    @property
    def user_cell(self):
        return self.group_cell[self.user_group]

    def group_users(self, g):
        start = self.group_start[g]
        return np.arange(start, start + self.group_sizes[g])

    def user_index(self, cell, k, group=0):
        """Flat index of user k of `group` in `cell` (paper-style (i,k) for one group)."""
        flat_group = int(np.flatnonzero(self.group_cell == cell)[group])
        return int(self.group_start[flat_group] + k)

    @property
    def p_vec(self):
        return _as_vector(self.p, self.J, "p")

    @property
    def gamma_vec(self):
        return _as_vector(self.gamma, self.n_users, "gamma")

    @property
    def pathloss_constant(self):
        """xi0 solved from the boundary-SNR calibration unless pinned explicitly."""
        if self.xi0 is not None:
            return float(self.xi0)
        return self.sigma2 * 10.0 ** (self.boundary_snr_db / 10.0) * self.cell_radius ** self.pathloss_exponent

    def validate(self):
        if self.J < 1:
            raise ScenarioError(f"J: must be >= 1, got {self.J}")
        if self.K < 1:
            raise ScenarioError(f"K: must be >= 1, got {self.K}")
        if self.M < 1:
            raise ScenarioError(f"M: must be >= 1, got {self.M}")
        if len(self.groups_per_cell) != self.J:
            raise ScenarioError(f"groups_per_cell: expected {self.J} cells, got {len(self.groups_per_cell)}")
        if any(len(cell) < 1 for cell in self.groups_per_cell):
            raise ScenarioError("groups_per_cell: every cell needs at least one group")
        if any(k < 1 for cell in self.groups_per_cell for k in cell):
            raise ScenarioError("groups_per_cell: group sizes must be >= 1")
        if np.any(self.p_vec <= 0):
            raise ScenarioError(f"p: budgets must be > 0, got {self.p}")
        if np.any(self.gamma_vec <= 0):
            raise ScenarioError(f"gamma: targets must be > 0, got {self.gamma}")
        if not self.sigma2 > 0:
            raise ScenarioError(f"sigma2: must be > 0, got {self.sigma2}")
        if not self.pathloss_exponent > 2:
            raise ScenarioError(f"pathloss_exponent: must be > 2, got {self.pathloss_exponent}")
        if not self.cell_radius > 0:
            raise ScenarioError(f"cell_radius: must be > 0, got {self.cell_radius}")


@dataclass
class UserLayout:
    positions: np.ndarray       # (n_users, 2)
    bs_positions: np.ndarray    # (J, 2)


@dataclass
class ChannelSet:
    """Channel vectors h[bs, user] plus optional MMSE estimates and error covariances."""

    h: np.ndarray                          # (J, n_users, M) complex
    link_gain: np.ndarray                  # (J, n_users) per-link variance beta
    est: Optional[np.ndarray] = None       # (J, n_users, M) complex
    err_cov: Optional[np.ndarray] = None   # (J, n_users, M, M) Hermitian PSD

    def __post_init__(self):
        if (self.est is None) != (self.err_cov is None):
            raise ValueError("est and err_cov must be jointly present or jointly absent")

    @property
    def has_estimates(self):
        return self.est is not None

    def design_channels(self):
        """Channels the solver is allowed to see: estimates when present, else truth."""
        return self.est if self.est is not None else self.h


def hex_bs_positions(J, cell_radius):
    """BS coordinates on a hexagonal lattice spiral (center, ring 1, ring 2, ...).

    The first 1/3/7/19 sites reproduce the usual one- and two-tier layouts;
    other J just take a prefix of the spiral (ring packing).
    """
    spacing = np.sqrt(3.0) * cell_radius
    sites = [np.zeros(2)]
    ring = 1
    while len(sites) < J:
        # walk the hexagon of radius `ring`: start at angle 0 corner, six edges
        corner = ring * spacing * np.array([1.0, 0.0])
        directions = [2 * np.pi / 3 + np.pi / 3 * s for s in range(6)]
        pos = corner.copy()
        for ang in directions:
            step = spacing * np.array([np.cos(ang), np.sin(ang)])
            for _ in range(ring):
                sites.append(pos.copy())
                pos = pos + step
        ring += 1
    return np.array(sites[:J])


def generate_layout(config: NetworkConfig, seed: int) -> UserLayout:
    """Drop each user uniformly in its serving cell's disk; deterministic in seed."""
    rng = np.random.default_rng(seed)
    bs = hex_bs_positions(config.J, config.cell_radius)
    cells = config.user_cell
    n = config.n_users
    radii = config.cell_radius * np.sqrt(rng.uniform(size=n))
    radii = np.maximum(radii, config.min_distance_frac * config.cell_radius)
    angles = 2 * np.pi * rng.uniform(size=n)
    offsets = radii[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return UserLayout(positions=bs[cells] + offsets, bs_positions=bs)


def link_gains(config: NetworkConfig, layout: UserLayout) -> np.ndarray:
    """Per-link variance beta[bs, user] = xi0 * d^-kappa with the distance clamp."""
    diff = layout.positions[None, :, :] - layout.bs_positions[:, None, :]
    dist = np.linalg.norm(diff, axis=2)
    if np.any(dist == 0.0):
        raise ValueError("degenerate geometry: user colocated with a BS (distance 0)")
    dist = np.maximum(dist, config.min_distance_frac * config.cell_radius)
    return config.pathloss_constant * dist ** (-config.pathloss_exponent)


def generate_channels(config: NetworkConfig, layout: UserLayout, seed: int) -> ChannelSet:
    """i.i.d. CN(0, beta I) channel vectors for every BS-user pair."""
    beta = link_gains(config, layout)
    rng = np.random.default_rng(seed)
    shape = (config.J, config.n_users, config.M)
    raw = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return ChannelSet(h=np.sqrt(beta)[:, :, None] * raw, link_gain=beta)


def degrade_csi(channels: ChannelSet, error_fraction: float, seed: int) -> ChannelSet:
    """Split each channel into an MMSE-style estimate and an independent error.

    est = (1-f) h + sqrt(f (1-f) beta) g with g ~ CN(0, I), so est ~ CN(0, (1-f) beta I),
    h - est ~ CN(0, f beta I), and the two are uncorrelated. err_cov is f * beta * I.
    error_fraction = 0 returns est == h exactly with zero covariance.
    """
    if channels.has_estimates:
        raise ValueError("channels already carry estimates")
    f = float(error_fraction)
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"error_fraction must be in [0, 1], got {f}")
    J, n, M = channels.h.shape
    rng = np.random.default_rng(seed)
    g = (rng.standard_normal((J, n, M)) + 1j * rng.standard_normal((J, n, M))) / np.sqrt(2.0)
    est = (1.0 - f) * channels.h + np.sqrt(f * (1.0 - f) * channels.link_gain)[:, :, None] * g
    eye = np.eye(M)
    err_cov = (f * channels.link_gain)[:, :, None, None] * eye[None, None, :, :]
    return ChannelSet(h=channels.h, link_gain=channels.link_gain, est=est, err_cov=err_cov)


# -- scenario files ---------------------------------------------------------

_NETWORK_KEYS = {
    "J", "K", "M", "p", "gamma", "sigma2", "pathloss_exponent", "cell_radius",
    "boundary_snr_db", "xi0", "groups_per_cell", "min_distance_frac",
}


def load_scenario(path):
    """Read a YAML scenario file into (NetworkConfig, seeds dict, solver overrides).

    Layout:
        network: {J: 3, K: 5, M: 64, gamma_db: 10.0, p_dbw: 10.0, ...}
        seeds:   {layout: [0, 1], channel: [0, 1, 2]}
        solver:  {rho: 0.01, tol_inner: 1.0e-3, ...}
    gamma/p may be given in dB (gamma_db, p_dbw) or linear (gamma, p).
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "network" not in raw:
        raise ScenarioError("network: missing top-level section")
    net = dict(raw["network"])
    if "gamma_db" in net:
        net["gamma"] = _db_to_linear(net.pop("gamma_db"))
    if "p_dbw" in net:
        net["p"] = _db_to_linear(net.pop("p_dbw"))
    unknown = set(net) - _NETWORK_KEYS
    if unknown:
        raise ScenarioError(f"{sorted(unknown)[0]}: unknown network field")
    for req in ("J", "K", "M"):
        if req not in net:
            raise ScenarioError(f"{req}: required network field is missing")
    try:
        config = NetworkConfig(**net)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from exc
    seeds = raw.get("seeds", {}) or {}
    layout_seeds = _seed_list(seeds.get("layout", [0]), "seeds.layout")
    channel_seeds = _seed_list(seeds.get("channel", [0]), "seeds.channel")
    solver = raw.get("solver", {}) or {}
    if not isinstance(solver, dict):
        raise ScenarioError("solver: expected a mapping")
    return config, {"layout": layout_seeds, "channel": channel_seeds}, solver


def _db_to_linear(value):
    arr = np.asarray(value, dtype=float)
    out = 10.0 ** (arr / 10.0)
    return out.tolist() if out.ndim else float(out)


def _seed_list(value, name):
    if isinstance(value, int):
        return list(range(value))
    try:
        seeds = [int(v) for v in value]
    except (TypeError, ValueError):
        raise ScenarioError(f"{name}: expected an int count or a list of ints")
    if not seeds:
        raise ScenarioError(f"{name}: must be non-empty")
    return seeds


def perturb_other_bs(channels: ChannelSet, keep_bs: int, seed: int = 0) -> ChannelSet:
    """Test helper: rerandomize every BS's channels except `keep_bs`."""
    rng = np.random.default_rng(seed)
    h = channels.h.copy()
    for i in range(h.shape[0]):
        if i != keep_bs:
            h[i] = (rng.standard_normal(h[i].shape) + 1j * rng.standard_normal(h[i].shape))
    return replace(channels, h=h)
