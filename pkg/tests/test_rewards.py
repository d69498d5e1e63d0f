import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dwl.gait import QuinticConstraints, foot_reference_array, solve_quintic, stance_mask_array
from dwl.rewards import (TERMS, RewardInputs, RewardWeights, combine, large_contact_penalty,
                         periodic_force_reward, periodic_velocity_reward, phi, step_reward)

TRACKING = ("lin_vel_tracking", "ang_vel_tracking", "orientation", "base_height", "foot_height",
            "foot_vel", "default_joint")
PENALTIES = ("energy", "action_smoothness", "feet_movements", "large_contact")


def perfect_inputs(n=1, j=6, **changes):
    z3 = np.zeros((n, 3))
    z2 = np.zeros((n, 2))
    zj = np.zeros((n, j))
    fields = dict(base_lin_vel=z3.copy(), base_ang_vel=z3.copy(), base_euler=z3.copy(),
                  base_height=np.full(n, 0.7), command=z3.copy(), feet_height=z2.copy(),
                  feet_vel_z=z2.copy(), feet_acc_z=z2.copy(), feet_speed=z2.copy(),
                  contact_forces=z2.copy(), stance_mask=np.ones((n, 2)), joint_pos=zj.copy(),
                  joint_vel=zj.copy(), torques=zj.copy(), default_pose=np.zeros(j),
                  actions=zj.copy(), last_actions=zj.copy(), last_last_actions=zj.copy(),
                  foot_ref=np.zeros((n, 2, 2)))
    fields.update(changes)
    return RewardInputs(**fields)


def test_phi_zero_error():
    assert phi(0.0, 5) == 1.0


def test_phi_zero_strength():
    assert phi(np.array([1.0]), 0) == 1.0


def test_phi_direct_evaluation():
    assert phi(np.array([0.2]), 5) == pytest.approx(math.exp(-0.2), abs=1e-12)
    assert phi(np.array([0.2]), 5) == pytest.approx(0.8187, abs=1e-4)


def test_phi_rejects_negative_strength():
    with pytest.raises(ValueError):
        phi(np.array([0.1]), -1.0)


@given(arrays(float, 3, elements=st.floats(-20, 20)), st.floats(0, 50))
def test_phi_bounds(e, w):
    v = phi(e, w)
    assert 0.0 <= v <= 1.0
    if 1e-12 < w * np.sum(e * e) < 700:
        assert v < 1.0
    if np.all(e == 0):
        assert v == 1.0


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0.01, 20))
def test_phi_monotone_in_error_norm(a, b, w):
    lo, hi = sorted((a, b))
    assert phi(np.array([lo]), w) >= phi(np.array([hi]), w)


def test_periodic_force_published_scale():
    assert periodic_force_reward(np.array([1, 0]), 400.0, 999.0) == pytest.approx(1.0)


def test_periodic_force_swing_ignored():
    assert periodic_force_reward(np.array([0, 1]), 500.0, 0.0) == 0.0


def test_periodic_force_half():
    assert periodic_force_reward(np.array([1, 0]), 200.0, 0.0) == pytest.approx(0.5)


def test_periodic_velocity_ceiling():
    assert periodic_velocity_reward(np.array([1, 0]), 0.0, 2.0) == pytest.approx(1.0)
    assert periodic_velocity_reward(np.array([1, 0]), 0.0, 50.0) == pytest.approx(1.0)


def test_periodic_velocity_stance_excluded():
    assert periodic_velocity_reward(np.array([1, 0]), 7.0, 0.0) == 0.0


def test_periodic_velocity_standing():
    assert periodic_velocity_reward(np.array([1, 1]), 3.0, 3.0) == 0.0


def test_force_velocity_exclusive_over_cycle():
    phases = np.linspace(0.0, 1.0, 401, endpoint=False)
    mask = stance_mask_array(phases)
    ones = np.ones(len(phases))
    for foot in (0, 1):
        zero = np.zeros(len(phases))
        fl, fr = (ones * 400, zero) if foot == 0 else (zero, ones * 400)
        vl, vr = (ones * 2, zero) if foot == 0 else (zero, ones * 2)
        force = periodic_force_reward(mask, fl, fr)
        vel = periodic_velocity_reward(mask, vl, vr)
        assert not np.any((force > 0) & (vel > 0))
        assert np.all((force > 0) | (vel > 0))


def test_large_contact_clip():
    assert large_contact_penalty(np.array([[450.0, 0.0]])) == pytest.approx(50.0)
    assert large_contact_penalty(np.array([[900.0, 0.0]])) == pytest.approx(100.0)
    assert large_contact_penalty(np.array([[100.0, 399.0]])) == 0.0


def test_large_contact_weighted_step_reward():
    inp = perfect_inputs(contact_forces=np.array([[450.0, 0.0]]))
    out = step_reward(inp, RewardWeights())
    assert out.raw["large_contact"][0] == pytest.approx(50.0)
    assert out.weighted["large_contact"][0] == pytest.approx(-0.5)


def test_perfect_tracking_breakdown():
    out = step_reward(perfect_inputs(), RewardWeights())
    for name in TRACKING:
        assert out.raw[name][0] == 1.0, name
    for name in PENALTIES:
        assert out.raw[name][0] == 0.0, name


def test_base_height_target():
    out = step_reward(perfect_inputs(base_height=np.array([0.7])), RewardWeights())
    assert out.raw["base_height"][0] == 1.0
    out = step_reward(perfect_inputs(base_height=np.array([0.6])), RewardWeights())
    assert out.raw["base_height"][0] == pytest.approx(math.exp(-10 * 0.01))


def test_vertical_and_roll_pitch_commands_held_at_zero():
    inp = perfect_inputs(base_lin_vel=np.array([[0.5, 0.0, 0.0]]),
                         command=np.array([[0.5, 0.0, 0.0]]),
                         base_ang_vel=np.array([[0.0, 0.0, 0.3]]))
    inp.command[0, 2] = 0.3
    out = step_reward(inp, RewardWeights())
    assert out.raw["lin_vel_tracking"][0] == 1.0
    assert out.raw["ang_vel_tracking"][0] == 1.0


def test_energy_elementwise():
    inp = perfect_inputs(torques=np.array([[1.0, -2.0, 0, 0, 0, 0]]),
                         joint_vel=np.array([[-3.0, 4.0, 0, 0, 0, 0]]))
    assert step_reward(inp, RewardWeights()).raw["energy"][0] == pytest.approx(11.0)


def test_action_smoothness_second_difference():
    a = np.array([[1.0, 0, 0, 0, 0, 0]])
    inp = perfect_inputs(actions=a, last_actions=np.zeros((1, 6)), last_last_actions=a)
    assert step_reward(inp, RewardWeights()).raw["action_smoothness"][0] == pytest.approx(2.0)


def test_missing_reference_raises():
    with pytest.raises(ValueError):
        step_reward(perfect_inputs(foot_ref=None), RewardWeights())


def test_weights_validation():
    with pytest.raises(ValueError):
        RewardWeights(energy=float("nan"))
    with pytest.raises(ValueError):
        RewardWeights(target_base_height=0.0)


def _random_inputs(rng, n=4):
    coeffs = solve_quintic(QuinticConstraints())
    phase = rng.uniform(0, 1, n)
    return perfect_inputs(
        n=n,
        base_lin_vel=rng.normal(size=(n, 3)), base_ang_vel=rng.normal(size=(n, 3)),
        base_euler=rng.normal(size=(n, 3)) * 0.2, base_height=rng.uniform(0.5, 0.8, n),
        command=rng.normal(size=(n, 3)), feet_height=rng.uniform(0, 0.1, (n, 2)),
        feet_vel_z=rng.normal(size=(n, 2)), feet_acc_z=rng.normal(size=(n, 2)),
        feet_speed=rng.uniform(0, 3, (n, 2)), contact_forces=rng.uniform(0, 600, (n, 2)),
        stance_mask=stance_mask_array(phase), joint_pos=rng.normal(size=(n, 6)),
        joint_vel=rng.normal(size=(n, 6)), torques=rng.normal(size=(n, 6)) * 20,
        actions=rng.normal(size=(n, 6)), last_actions=rng.normal(size=(n, 6)),
        last_last_actions=rng.normal(size=(n, 6)),
        foot_ref=foot_reference_array(phase, 0.7, coeffs, 0.5, np.zeros(n, bool)))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_total_is_weighted_sum(seed):
    out = step_reward(_random_inputs(np.random.default_rng(seed)), RewardWeights())
    expected = sum(out.raw[k] * getattr(RewardWeights(), k) for k in TERMS)
    assert np.array_equal(out.total, sum(out.weighted[k] for k in TERMS))
    assert np.allclose(out.total, expected, atol=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_total_linear_in_weights(seed):
    inp = _random_inputs(np.random.default_rng(seed))
    w = RewardWeights()
    doubled = RewardWeights(**{k: 2 * getattr(w, k) for k in TERMS})
    assert np.allclose(step_reward(inp, doubled).total, 2 * step_reward(inp, w).total,
                       rtol=1e-12, atol=1e-12)


def test_combine_exact_sum():
    terms = {k: np.array([float(i)]) for i, k in enumerate(TERMS)}
    out = combine(terms, RewardWeights())
    assert out.total[0] == sum(out.weighted[k][0] for k in TERMS)
