"""Reward terms for periodic bipedal walking.

Every function is vectorised over a leading environment axis. The step
reward is the weighted sum ``sum_i r_i * mu_i`` of the terms listed in
:data:`TERMS`.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

TERMS = (
    "lin_vel_tracking",
    "ang_vel_tracking",
    "orientation",
    "base_height",
    "periodic_force",
    "periodic_velocity",
    "foot_height",
    "foot_vel",
    "default_joint",
    "energy",
    "action_smoothness",
    "feet_movements",
    "large_contact",
)

FORCE_SCALE = 400.0
LARGE_CONTACT_THRESHOLD = 400.0
LARGE_CONTACT_CEILING = 100.0


@dataclass
class RewardWeights:
    lin_vel_tracking: float = 1.0
    ang_vel_tracking: float = 1.0
    orientation: float = 1.0
    base_height: float = 0.5
    periodic_force: float = 1.0
    periodic_velocity: float = 1.0
    foot_height: float = 1.0
    foot_vel: float = 0.5
    default_joint: float = 0.2
    energy: float = -0.0001
    action_smoothness: float = -0.01
    feet_movements: float = -0.01
    large_contact: float = -0.01
    target_base_height: float = 0.7
    # Swing-foot speed that saturates the periodic velocity reward (m/s).
    velocity_scale: float = 2.0

    def __post_init__(self):
        for f in fields(self):
            if not np.isfinite(getattr(self, f.name)):
                raise ValueError(f"reward weight {f.name} is not finite")
        if self.target_base_height <= 0:
            raise ValueError("target_base_height must be positive")
        if self.velocity_scale <= 0:
            raise ValueError("velocity_scale must be positive")

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in TERMS])


@dataclass
class RewardInputs:
    """Ground-truth quantities for one control step, batched over envs.

    Shapes use N envs and J joints. Linear and angular velocities are in the
    yaw-aligned base frame; heights are measured above the terrain.
    """

    base_lin_vel: np.ndarray      # (N, 3)
    base_ang_vel: np.ndarray      # (N, 3) roll, pitch, yaw rates
    base_euler: np.ndarray        # (N, 3) roll, pitch, yaw
    base_height: np.ndarray       # (N,)
    command: np.ndarray           # (N, 3) vx, vy, yaw rate
    feet_height: np.ndarray       # (N, 2)
    feet_vel_z: np.ndarray        # (N, 2)
    feet_acc_z: np.ndarray        # (N, 2)
    feet_speed: np.ndarray        # (N, 2) magnitude
    contact_forces: np.ndarray    # (N, 2) normal force per foot
    stance_mask: np.ndarray       # (N, 2)
    joint_pos: np.ndarray         # (N, J)
    joint_vel: np.ndarray         # (N, J)
    torques: np.ndarray           # (N, J)
    default_pose: np.ndarray      # (J,)
    actions: np.ndarray           # (N, J) a_t
    last_actions: np.ndarray      # (N, J) a_{t-1}
    last_last_actions: np.ndarray  # (N, J) a_{t-2}
    foot_ref: np.ndarray | None = None  # (N, 2, 2) height, vertical velocity


@dataclass
class RewardBreakdown:
    raw: dict[str, np.ndarray]
    weighted: dict[str, np.ndarray]
    total: np.ndarray


def phi(e, w: float):
    """Tracking kernel ``exp(-w * ||e||^2)`` over the last axis of ``e``."""
    if w < 0:
        raise ValueError(f"tolerance strength must be non-negative, got {w}")
    e = np.asarray(e, dtype=float)
    if e.ndim == 0:
        sq = e * e
    else:
        sq = np.sum(e * e, axis=-1)
    return np.exp(-w * sq)


def periodic_force_reward(mask, force_left, force_right):
    mask = np.asarray(mask, dtype=float)
    fl = np.clip(np.asarray(force_left, dtype=float) / FORCE_SCALE, 0.0, 1.0)
    fr = np.clip(np.asarray(force_right, dtype=float) / FORCE_SCALE, 0.0, 1.0)
    return mask[..., 0] * fl + mask[..., 1] * fr


def periodic_velocity_reward(mask, speed_left, speed_right, velocity_scale: float = 2.0):
    mask = np.asarray(mask, dtype=float)
    vl = np.clip(np.asarray(speed_left, dtype=float) / velocity_scale, 0.0, 1.0)
    vr = np.clip(np.asarray(speed_right, dtype=float) / velocity_scale, 0.0, 1.0)
    return (1.0 - mask[..., 0]) * vl + (1.0 - mask[..., 1]) * vr


def large_contact_penalty(contact_forces):
    excess = np.asarray(contact_forces, dtype=float) - LARGE_CONTACT_THRESHOLD
    return np.sum(np.clip(excess, 0.0, LARGE_CONTACT_CEILING), axis=-1)


def compute_terms(inp: RewardInputs, weights: RewardWeights) -> dict[str, np.ndarray]:
    if inp.foot_ref is None:
        raise ValueError("foot reference trajectory is required for the step reward")
    n = inp.base_lin_vel.shape[0]
    zeros = np.zeros(n)
    # Vertical velocity, roll and pitch rates are commanded to zero.
    lin_cmd = np.stack([inp.command[:, 0], inp.command[:, 1], zeros], axis=-1)
    ang_cmd = np.stack([zeros, zeros, inp.command[:, 2]], axis=-1)

    terms = {
        "lin_vel_tracking": phi(inp.base_lin_vel - lin_cmd, 5.0),
        "ang_vel_tracking": phi(inp.base_ang_vel - ang_cmd, 7.0),
        "orientation": phi(inp.base_euler[:, :2], 5.0),
        "base_height": phi((inp.base_height - weights.target_base_height)[:, None], 10.0),
        "periodic_force": periodic_force_reward(
            inp.stance_mask, inp.contact_forces[:, 0], inp.contact_forces[:, 1]),
        "periodic_velocity": periodic_velocity_reward(
            inp.stance_mask, inp.feet_speed[:, 0], inp.feet_speed[:, 1], weights.velocity_scale),
        "foot_height": phi(inp.feet_height - inp.foot_ref[..., 0], 5.0),
        "foot_vel": phi(inp.feet_vel_z - inp.foot_ref[..., 1], 3.0),
        "default_joint": phi(inp.joint_pos - inp.default_pose, 2.0),
        "energy": np.sum(np.abs(inp.torques) * np.abs(inp.joint_vel), axis=-1),
        "action_smoothness": np.linalg.norm(
            inp.actions - 2.0 * inp.last_actions + inp.last_last_actions, axis=-1),
        "feet_movements": np.linalg.norm(inp.feet_vel_z, axis=-1)
        + np.linalg.norm(inp.feet_acc_z, axis=-1),
        "large_contact": large_contact_penalty(inp.contact_forces),
    }
    return terms


def combine(terms: dict[str, np.ndarray], weights: RewardWeights) -> RewardBreakdown:
    weighted = {name: terms[name] * getattr(weights, name) for name in TERMS}
    total = np.zeros_like(np.asarray(terms[TERMS[0]], dtype=float))
    for name in TERMS:
        total = total + weighted[name]
    return RewardBreakdown(raw=terms, weighted=weighted, total=total)


def step_reward(inp: RewardInputs, weights: RewardWeights) -> RewardBreakdown:
    return combine(compute_terms(inp, weights), weights)
