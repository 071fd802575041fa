import numpy as np
import pytest
import yaml

from coordbeam.network import (ChannelSet, NetworkConfig, ScenarioError,
                               degrade_csi, generate_channels, generate_layout,
                               hex_bs_positions, link_gains, load_scenario)


def test_single_user_containment():
    cfg = NetworkConfig(J=1, K=1, M=2)
    layout = generate_layout(cfg, seed=0)
    d = np.linalg.norm(layout.positions[0] - layout.bs_positions[0])
    assert d <= cfg.cell_radius
    assert d >= cfg.min_distance_frac * cfg.cell_radius


def test_layout_deterministic():
    cfg = NetworkConfig(J=3, K=5, M=4)
    a = generate_layout(cfg, seed=7)
    b = generate_layout(cfg, seed=7)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.bs_positions, b.bs_positions)
    c = generate_layout(cfg, seed=8)
    assert not np.array_equal(a.positions, c.positions)


def test_mean_distance_uniform_disk():
    # Monte-Carlo estimate of the uniform-disk mean radius, E[r] = 2R/3
    cfg = NetworkConfig(J=3, K=5, M=2, cell_radius=1.0)
    total, count = 0.0, 0
    for seed in range(10_000):
        layout = generate_layout(cfg, seed)
        d = np.linalg.norm(layout.positions - layout.bs_positions[cfg.user_cell],
                           axis=1)
        total += d.sum()
        count += d.size
    mean = total / count
    assert abs(mean - 2.0 / 3.0) < 0.02 * (2.0 / 3.0)


def test_hex_positions():
    R = 1.0
    for J in (1, 3, 7, 19):
        pos = hex_bs_positions(J, R)
        assert pos.shape == (J, 2)
    pos7 = hex_bs_positions(7, R)
    d = np.linalg.norm(pos7[1:] - pos7[0], axis=1)
    assert np.allclose(d, np.sqrt(3.0) * R)      # first ring all adjacent
    pos3 = hex_bs_positions(3, R)
    assert abs(np.linalg.norm(pos3[1] - pos3[2]) - np.sqrt(3.0) * R) < 1e-12


def test_boundary_snr_calibration():
    # element variance at unit distance equals sigma2 * 10^(-0.5)
    cfg = NetworkConfig(J=1, K=1, M=10_000, sigma2=2.0)
    layout = generate_layout(cfg, 0)
    layout.positions[0] = layout.bs_positions[0] + np.array([1.0, 0.0])
    channels = generate_channels(cfg, layout, seed=3)
    var = float(np.mean(np.abs(channels.h[0, 0]) ** 2))
    expected = cfg.sigma2 * 10 ** (-0.5)
    assert abs(var - expected) < 0.03 * expected
    assert abs(channels.link_gain[0, 0] - expected) < 1e-15


def test_pathloss_law():
    cfg = NetworkConfig(J=1, K=2, M=2, pathloss_exponent=3.5)
    layout = generate_layout(cfg, 0)
    layout.positions[0] = layout.bs_positions[0] + np.array([0.3, 0.0])
    layout.positions[1] = layout.bs_positions[0] + np.array([0.6, 0.0])
    beta = link_gains(cfg, layout)
    assert np.isclose(beta[0, 1] / beta[0, 0], 2.0 ** (-3.5), rtol=1e-12)


def test_channels_deterministic_and_zero_distance():
    cfg = NetworkConfig(J=2, K=2, M=4)
    layout = generate_layout(cfg, 1)
    a = generate_channels(cfg, layout, 5)
    b = generate_channels(cfg, layout, 5)
    assert np.array_equal(a.h, b.h)
    layout.positions[0] = layout.bs_positions[0]
    with pytest.raises(ValueError, match="colocated"):
        generate_channels(cfg, layout, 5)


def test_large_sample_variance():
    cfg = NetworkConfig(J=1, K=1, M=10_000)
    layout = generate_layout(cfg, 2)
    channels = generate_channels(cfg, layout, 2)
    beta = channels.link_gain[0, 0]
    var = float(np.mean(np.abs(channels.h[0, 0]) ** 2))
    assert abs(var - beta) < 0.03 * beta


def test_degrade_zero_fraction_exact():
    cfg = NetworkConfig(J=2, K=2, M=4)
    channels = generate_channels(cfg, generate_layout(cfg, 0), 0)
    degraded = degrade_csi(channels, 0.0, seed=9)
    assert np.array_equal(degraded.est, channels.h)
    assert not np.any(degraded.err_cov)


def test_degrade_full_fraction():
    cfg = NetworkConfig(J=1, K=1, M=2_000)
    channels = generate_channels(cfg, generate_layout(cfg, 0), 0)
    degraded = degrade_csi(channels, 1.0, seed=9)
    beta = channels.link_gain[0, 0]
    assert float(np.mean(np.abs(degraded.est[0, 0]) ** 2)) < 0.05 * beta


def test_degrade_error_covariance():
    cfg = NetworkConfig(J=1, K=1, M=10_000)
    channels = generate_channels(cfg, generate_layout(cfg, 4), 4)
    degraded = degrade_csi(channels, 0.1, seed=11)
    err = channels.h[0, 0] - degraded.est[0, 0]
    beta = channels.link_gain[0, 0]
    sample = float(np.mean(np.abs(err) ** 2))
    assert abs(sample - 0.1 * beta) < 0.05 * 0.1 * beta
    # stated covariance matches the isotropic model and is PSD
    eig = np.linalg.eigvalsh(degraded.err_cov[0, 0])
    assert eig.min() >= -1e-12
    assert np.isclose(eig.max(), 0.1 * beta)


def test_degrade_guards():
    cfg = NetworkConfig(J=1, K=2, M=2)
    channels = generate_channels(cfg, generate_layout(cfg, 0), 0)
    with pytest.raises(ValueError):
        degrade_csi(channels, 1.5, seed=0)
    once = degrade_csi(channels, 0.2, seed=0)
    with pytest.raises(ValueError):
        degrade_csi(once, 0.2, seed=0)
    with pytest.raises(ValueError, match="jointly"):
        ChannelSet(h=channels.h, link_gain=channels.link_gain, est=channels.h)


def test_multigroup_indexing():
    cfg = NetworkConfig(J=2, K=3, M=4, groups_per_cell=[[3, 2], [4]])
    assert cfg.n_groups == 3
    assert cfg.n_users == 9
    assert list(cfg.group_sizes) == [3, 2, 4]
    assert list(cfg.group_cell) == [0, 0, 1]
    assert list(cfg.user_cell) == [0] * 5 + [1] * 4
    # flat index is contiguous per group
    assert list(cfg.group_users(1)) == [3, 4]
    one = NetworkConfig(J=2, K=3, M=4)
    assert one.user_index(1, 2) == 1 * 3 + 2


def test_config_validation_messages():
    with pytest.raises(ScenarioError, match="gamma"):
        NetworkConfig(J=1, K=1, M=1, gamma=-1.0)
    with pytest.raises(ScenarioError, match="sigma2"):
        NetworkConfig(J=1, K=1, M=1, sigma2=0.0)
    with pytest.raises(ScenarioError, match="pathloss_exponent"):
        NetworkConfig(J=1, K=1, M=1, pathloss_exponent=1.5)
    with pytest.raises(ScenarioError, match="J"):
        NetworkConfig(J=0, K=1, M=1)


def test_scenario_loader(tmp_path):
    doc = {
        "network": {"J": 2, "K": 3, "M": 16, "gamma_db": 10.0, "p_dbw": 10.0,
                    "sigma2": 1.0},
        "seeds": {"layout": [0, 1], "channel": 3},
        "solver": {"rho": 0.02},
    }
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(doc))
    config, seeds, solver = load_scenario(path)
    assert config.J == 2 and config.K == 3 and config.M == 16
    assert np.isclose(config.gamma_vec[0], 10.0)
    assert seeds["layout"] == [0, 1]
    assert seeds["channel"] == [0, 1, 2]
    assert solver["rho"] == 0.02

    doc["network"]["bogus_field"] = 1
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(ScenarioError, match="bogus_field"):
        load_scenario(path)

    del doc["network"]["bogus_field"]
    del doc["network"]["M"]
    path.write_text(yaml.safe_dump(doc))
    with pytest.raises(ScenarioError, match="M"):
        load_scenario(path)
