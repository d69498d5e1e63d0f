"""Kinematic stand-in backend for arbitrary joint counts.

Joints follow their targets through a first-order lag and the base tracks a
commanded forward speed. There is no contact dynamics; the stub exists so
that configurations without a planar model (such as the 12-joint paper
profile) can exercise the full observation, reward and learner pipeline.
"""

from __future__ import annotations

import numpy as np

from .biped import DynamicsArrays, SimState
from .terrain import TerrainProfile, terrain_height_scan

STUB_HEIGHT = 0.7
STUB_MASS = 38.0
JOINT_TAU = 0.05  # s, first-order lag of the joint response


class KinematicStub:
    def __init__(self, n: int, joint_count: int, terrain: TerrainProfile | None = None,
                 dt: float = 0.002, substeps: int = 5, kp=None, kd=None):
        self.n = n
        self.joint_count = joint_count
        self.terrain = terrain or TerrainProfile()
        self.dt = dt
        self.substeps = substeps
        self.kp = np.full(joint_count, 200.0) if kp is None else np.asarray(kp, dtype=float)
        self.kd = np.full(joint_count, 6.0) if kd is None else np.asarray(kd, dtype=float)
        self.dynamics = DynamicsArrays.nominal(n)
        self.dynamics.motor_offset = np.zeros((n, joint_count))
        self.nominal_pose = np.zeros(joint_count)
        self.forward_speed = np.zeros(n)
        self.state = SimState(
            q=np.zeros((n, 3 + joint_count)), v=np.zeros((n, 3 + joint_count)),
            target_history=np.zeros((n, 1, joint_count)), push_wrench=np.zeros((n, 3)),
            push_remaining=np.zeros(n), last_forces=np.zeros((n, 4)),
            last_contact=np.zeros((n, 4), dtype=bool), last_torque=np.zeros((n, joint_count)),
        )
        self.set_pose(np.arange(n), np.zeros((n, joint_count)))

    def set_nominal_pose(self, pose) -> None:
        self.nominal_pose = np.asarray(pose, dtype=float)

    def standing_height(self, pose=None) -> float:
        return STUB_HEIGHT

    def set_pose(self, idx, joint_pos, base_x=None, pitch=None) -> None:
        idx = np.atleast_1d(idx)
        st = self.state
        st.q[idx] = 0.0
        st.v[idx] = 0.0
        st.q[idx, 0] = 0.0 if base_x is None else base_x
        st.q[idx, 1] = STUB_HEIGHT + self.terrain.height(st.q[idx, 0])
        st.q[idx, 3:] = joint_pos
        st.push_wrench[idx] = 0.0
        st.push_remaining[idx] = 0.0

    def get_state(self) -> SimState:
        return self.state.copy()

    def set_state(self, state: SimState) -> None:
        self.state = state.copy()

    def apply_push(self, idx, force, torque, duration: float) -> None:
        if duration <= 0:
            raise ValueError("push duration must be positive")
        idx = np.atleast_1d(idx)
        self.state.push_wrench[idx, :2] = np.broadcast_to(np.asarray(force, dtype=float),
                                                           (len(idx), 2))
        self.state.push_wrench[idx, 2] = torque
        self.state.push_remaining[idx] = duration

    def step(self, target: np.ndarray) -> dict:
        st, dyn = self.state, self.dynamics
        period = self.dt * self.substeps
        theta = st.q[:, 3:]
        new_theta = theta + (target + dyn.motor_offset - theta) * (1.0 - np.exp(-period / JOINT_TAU))
        st.v[:, 3:] = (new_theta - theta) / period
        st.q[:, 3:] = new_theta
        st.v[:, 0] = self.forward_speed
        st.q[:, 0] += period * self.forward_speed
        st.q[:, 1] = STUB_HEIGHT + self.terrain.height(st.q[:, 0])
        err = target - new_theta
        st.last_torque = dyn.motor_strength[:, None] * (self.kp * err - self.kd * st.v[:, 3:])
        st.last_forces = np.full((self.n, 4), (STUB_MASS + dyn.payload)[:, None] * 9.81 / 4)
        st.last_contact[:] = True
        st.push_remaining = np.maximum(st.push_remaining - period, 0.0)
        st.push_wrench[st.push_remaining <= 0] = 0.0
        return {"mean_contact_forces": st.last_forces.copy()}

    def diverged(self) -> np.ndarray:
        return ~np.all(np.isfinite(self.state.q), axis=1)

    def base_height(self) -> np.ndarray:
        return np.full(self.n, STUB_HEIGHT)

    def truth(self, scan_nx: int, scan_ny: int, scan_dx: float) -> dict[str, np.ndarray]:
        st, n = self.state, self.n
        zeros = np.zeros(n)
        feet_pos = np.zeros((n, 2, 3))
        feet_pos[..., 2] = -STUB_HEIGHT
        push = np.zeros((n, 6))
        push[:, 0] = st.push_wrench[:, 0]
        push[:, 2] = st.push_wrench[:, 1]
        push[:, 4] = st.push_wrench[:, 2]
        return {
            "joint_pos": st.q[:, 3:].copy(),
            "joint_vel": st.v[:, 3:].copy(),
            "ang_vel": np.zeros((n, 3)),
            "orientation": np.zeros((n, 3)),
            "base_lin_vel": np.stack([st.v[:, 0], zeros, zeros], -1),
            "friction": self.dynamics.friction.copy(),
            "push_wrench": push,
            "feet_pos": feet_pos,
            "feet_vel": np.zeros((n, 2, 3)),
            "feet_contact": np.ones((n, 2)),
            "body_mass": STUB_MASS + self.dynamics.payload,
            "torques": st.last_torque.copy(),
            "height_scan": terrain_height_scan(st.q[:, 0], st.q[:, 1], self.terrain, scan_nx,
                                               scan_ny, scan_dx),
            "base_x": st.q[:, 0].copy(),
            "base_height": np.full(n, STUB_HEIGHT),
            "feet_height": np.zeros((n, 2)),
            "feet_vel_z": np.zeros((n, 2)),
            "feet_speed": np.zeros((n, 2)),
            "contact_forces": st.last_forces.reshape(n, 2, 2).sum(-1),
        }
