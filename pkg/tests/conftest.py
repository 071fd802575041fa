import numpy as np
import pytest

from coordbeam.network import ChannelSet, NetworkConfig, generate_channels, \
    generate_layout
from coordbeam.pipeline import SolverSettings, stage1_reduce


def make_channels(J=2, K=2, M=8, seed=0, gamma=10.0, p=10.0, **kw):
    cfg = NetworkConfig(J=J, K=K, M=M, gamma=gamma, p=p, **kw)
    layout = generate_layout(cfg, seed)
    return cfg, generate_channels(cfg, layout, seed)


def make_reduced(J=2, K=2, M=8, seed=0, settings=None, **kw):
    """Channel-realistic reduced problem via the stage-1 pipeline."""
    cfg, channels = make_channels(J=J, K=K, M=M, seed=seed, **kw)
    settings = settings or SolverSettings()
    dual, trace, R, problem = stage1_reduce(channels, cfg, settings)
    return cfg, channels, dual, R, problem


def manual_channels(h, sigma2=1.0, gamma=1.0, p=1.0, **kw):
    """ChannelSet + config from an explicit h array of shape (J, n_users, M)."""
    J, n, M = h.shape
    cfg = NetworkConfig(J=J, K=n // J, M=M, gamma=gamma, p=p, sigma2=sigma2, **kw)
    assert cfg.n_users == n
    gains = np.maximum(np.mean(np.abs(h) ** 2, axis=2), 1e-12)
    return cfg, ChannelSet(h=np.asarray(h, dtype=complex), link_gain=gains)


@pytest.fixture(scope="session")
def fast_settings():
    return SolverSettings(n_starts=1, max_outer=40)
