import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwl.config import EnvConfig
from dwl.noise import RngStream, zero_specs
from dwl.obs import (OBS_CHANNELS, PRIVILEGED_CHANNELS, SIM_TRUTH_KEYS, MissingChannelError,
                     StateLayout, assemble_observation, assemble_state)


def sim_truth(n, j, h, rng=None):
    rng = rng or np.random.default_rng(0)
    return {
        "joint_pos": rng.normal(size=(n, j)), "joint_vel": rng.normal(size=(n, j)),
        "ang_vel": rng.normal(size=(n, 3)), "orientation": rng.normal(size=(n, 3)),
        "base_lin_vel": rng.normal(size=(n, 3)), "friction": rng.uniform(0.2, 2, n),
        "push_wrench": rng.normal(size=(n, 6)), "feet_pos": rng.normal(size=(n, 2, 3)),
        "feet_vel": rng.normal(size=(n, 2, 3)), "feet_contact": np.ones((n, 2)),
        "body_mass": np.full(n, 38.0), "torques": rng.normal(size=(n, j)),
        "height_scan": np.full((n, h), -0.7),
    }


def test_paper_dimensions():
    cfg = EnvConfig(joint_count=12, height_scan_x=12, height_scan_y=8)
    layout = StateLayout.from_config(cfg)
    assert (layout.obs_dim, layout.state_dim) == (47, 184)
    assert (cfg.obs_dim, cfg.state_dim) == (47, 184)


@settings(max_examples=100)
@given(st.integers(1, 30), st.integers(1, 20), st.integers(1, 20))
def test_dimension_formulas(j, hx, hy):
    cfg = EnvConfig(joint_count=j, height_scan_x=hx, height_scan_y=hy,
                    nominal_pose=[0.0] * j)
    layout = StateLayout.from_config(cfg)
    obs = 2 + 3 + 2 * j + 3 + 3 + j
    assert layout.obs_dim == cfg.obs_dim == obs
    assert layout.state_dim == cfg.state_dim == obs + 3 + 1 + 6 + 1 + 2 + 12 + 2 + 1 + 1 + j + hx * hy
    assert len(layout.column_names("state")) == layout.state_dim


def test_channel_order_and_contiguity():
    layout = StateLayout(6, 12)
    names = list(layout.slices)
    assert names == list(OBS_CHANNELS + PRIVILEGED_CHANNELS)
    stops = [0] + [s.stop for s in layout.slices.values()]
    assert all(s.start == stops[i] for i, s in enumerate(layout.slices.values()))


def test_assemble_state_length_paper():
    cfg = EnvConfig(joint_count=12, nominal_pose=[0.0] * 12)
    s = assemble_state(sim_truth(2, 12, 96), [0.1, 0.6], np.zeros((2, 3)), np.zeros((2, 12)),
                       np.zeros(2), cfg)
    assert s.shape == (2, 184)


def test_flat_height_scan_constant():
    cfg = EnvConfig()
    s = assemble_state(sim_truth(1, 6, cfg.height_scan_count), [0.0], np.zeros(3), np.zeros(6),
                       0.0, cfg)
    scan = StateLayout.from_config(cfg).unpack(s)["height_scan"]
    assert np.all(scan == scan[0, 0])


def test_current_reward_channel():
    cfg = EnvConfig()
    s = assemble_state(sim_truth(1, 6, cfg.height_scan_count), [0.0], np.zeros(3), np.zeros(6),
                       1.25, cfg)
    assert StateLayout.from_config(cfg).unpack(s)["current_reward"][0, 0] == 1.25


def test_missing_channel_named():
    cfg = EnvConfig()
    truth = sim_truth(1, 6, cfg.height_scan_count)
    del truth["torques"]
    with pytest.raises(MissingChannelError, match="torques"):
        assemble_state(truth, [0.0], np.zeros(3), np.zeros(6), 0.0, cfg)


def test_non_finite_rejected():
    cfg = EnvConfig()
    truth = sim_truth(1, 6, cfg.height_scan_count)
    truth["base_lin_vel"][0, 0] = np.nan
    with pytest.raises(ValueError, match="base_lin_vel"):
        assemble_state(truth, [0.0], np.zeros(3), np.zeros(6), 0.0, cfg)


def test_stance_mask_binary_and_standing():
    cfg = EnvConfig()
    s = assemble_state(sim_truth(3, 6, cfg.height_scan_count), [0.1, 0.7, 0.2], np.zeros((3, 3)),
                       np.zeros((3, 6)), np.zeros(3), cfg, standing=np.array([False, False, True]))
    mask = StateLayout.from_config(cfg).unpack(s)["stance_mask"]
    assert mask.tolist() == [[1, 0], [0, 1], [1, 1]]


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_pack_unpack_round_trip(seed):
    layout = StateLayout(6, 12)
    rng = np.random.default_rng(seed)
    chans = {k: rng.normal(size=(2, n)) for k, n in layout.sizes.items()}
    back = layout.unpack(layout.pack(chans))
    for k in chans:
        assert np.array_equal(back[k], chans[k])


def test_zero_noise_observation():
    cfg = EnvConfig(noise=zero_specs())
    s = assemble_state(sim_truth(1, 6, cfg.height_scan_count), [0.3], np.zeros(3), np.zeros(6),
                       0.0, cfg)
    obs = assemble_observation(s, cfg.noise, [RngStream(0, 0)], cfg)
    assert obs.shape == (1, 29)
    assert np.array_equal(obs[0], s[0, :29])


def test_sim_truth_keys_complete():
    assert set(sim_truth(1, 6, 12)) == set(SIM_TRUTH_KEYS)
