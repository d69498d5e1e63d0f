"""Vectorised locomotion environment: simulator, gait clock, rewards and noise.

Every environment owns an :class:`RngStream` keyed by its global index, so
the draws an environment sees do not depend on how environments are batched.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from dataclasses import dataclass

import numpy as np

from ..config import EnvConfig
from ..gait import foot_reference_array, solve_quintic, stance_mask_array
from ..noise import RngStream, corrupt_observation, delay_steps, sample_dynamics
from ..obs import StateLayout, assemble_state
from ..rewards import RewardInputs, step_reward
from .biped import PlanarBiped, RobotModel
from .stub import KinematicStub
from .terrain import TerrainProfile, make_terrain

ACTION_CLIP = 5.0


@dataclass
class StepResult:
    obs: np.ndarray          # (N, obs_dim) observation after auto-reset
    state: np.ndarray        # (N, state_dim) privileged state after auto-reset
    reward: np.ndarray       # (N,)
    done: np.ndarray         # (N,) bool, fall or timeout
    timeout: np.ndarray      # (N,) bool
    fall: np.ndarray         # (N,) bool
    final_state: np.ndarray  # (N, state_dim) state before any reset
    episode_return: np.ndarray  # (N,) return of episodes ending this step (0 elsewhere)
    episode_length: np.ndarray  # (N,) length of episodes ending this step
    reward_terms: dict[str, np.ndarray]


def build_backend(cfg: EnvConfig, n: int, terrain: TerrainProfile):
    max_delay = _max_delay_steps(cfg)
    if cfg.sim == "planar":
        model = RobotModel(kp=(cfg.leg_kp, cfg.leg_kp, cfg.ankle_kp),
                           kd=(cfg.leg_kd, cfg.leg_kd, cfg.ankle_kd))
        sim = PlanarBiped(n, model, terrain, dt=cfg.inner_dt, substeps=cfg.substeps,
                          max_delay_steps=max_delay)
    else:
        kp = [cfg.leg_kp] * cfg.joint_count
        kd = [cfg.leg_kd] * cfg.joint_count
        sim = KinematicStub(n, cfg.joint_count, terrain, dt=cfg.inner_dt, substeps=cfg.substeps,
                            kp=kp, kd=kd)
    sim.set_nominal_pose(cfg.nominal_pose)
    return sim


def _max_delay_steps(cfg: EnvConfig) -> int:
    for s in cfg.noise:
        if s.name == "system_delay":
            return int(delay_steps(s.hi, cfg.inner_dt))
    return 0


class LocomotionEnv:
    """``num_envs`` environments stepped in lockstep with auto-reset."""

    def __init__(self, cfg: EnvConfig, num_envs: int, seed: int, env_offset: int = 0,
                 terrain: TerrainProfile | None = None):
        cfg.validate()
        self.cfg = cfg
        self.n = num_envs
        self.seed = seed
        self.layout = StateLayout.from_config(cfg)
        self.terrain = terrain or make_terrain(cfg.terrain, cfg.terrain_seed)
        self.sim = build_backend(cfg, num_envs, self.terrain)
        self.streams = [RngStream(seed, env_offset + i) for i in range(num_envs)]
        self.coeffs = solve_quintic(cfg.trajectory)
        self.nominal_pose = np.asarray(cfg.nominal_pose, dtype=float)
        self.nominal_height = self.sim.standing_height(self.nominal_pose)
        self.payload_scale = getattr(getattr(self.sim, "model", None), "payload_scale", 1.0)
        j = cfg.joint_count
        self.phase = np.zeros(num_envs)
        self.command = np.zeros((num_envs, 3))
        self.standing = np.zeros(num_envs, dtype=bool)
        self.actions = np.zeros((num_envs, j))
        self.last_actions = np.zeros((num_envs, j))
        self.last_last_actions = np.zeros((num_envs, j))
        self.prev_reward = np.zeros(num_envs)
        self.episode_step = np.zeros(num_envs, dtype=int)
        self.episode_return = np.zeros(num_envs)
        self.prev_feet_vel_z = np.zeros((num_envs, 2))
        self.command_timer = np.zeros(num_envs)
        self.push_timer = np.zeros(num_envs)
        self.dynamics_rows: list[dict] = [{} for _ in range(num_envs)]

    # -- episode management --------------------------------------------------

    def _sample_command(self, i: int) -> None:
        c = self.cfg.commands
        rng = self.streams[i]
        cmd = np.array([rng.uniform(*c.lin_vel_x), rng.uniform(*c.lin_vel_y),
                        rng.uniform(*c.yaw_rate)])
        if rng.uniform(0.0, 1.0) < c.standing_probability:
            cmd[:] = 0.0
        self.command[i] = cmd
        self.standing[i] = np.linalg.norm(cmd) < c.standing_threshold
        self.command_timer[i] = c.resample_time
        if isinstance(self.sim, KinematicStub):
            self.sim.forward_speed[i] = cmd[0]

    def _reset_envs(self, idx: np.ndarray) -> None:
        cfg, dyn = self.cfg, self.sim.dynamics
        poses = np.empty((len(idx), cfg.joint_count))
        for k, i in enumerate(idx):
            rng = self.streams[i]
            d = sample_dynamics(rng, cfg.noise, cfg.joint_count, self.payload_scale)
            self.dynamics_rows[i] = d.as_row()
            dyn.friction[i] = d.friction
            dyn.motor_offset[i] = d.motor_offset
            dyn.motor_strength[i] = d.motor_strength
            dyn.payload[i] = d.payload
            dyn.kp_factor[i], dyn.kd_factor[i] = d.pd_factors
            dyn.delay_steps[i] = int(delay_steps(d.system_delay, cfg.inner_dt))
            self._sample_command(i)
            noise = cfg.init_joint_noise
            poses[k] = self.nominal_pose + rng.uniform(-noise, noise, cfg.joint_count)
            self.push_timer[i] = cfg.push.interval
        self.sim.set_pose(idx, poses)
        self.phase[idx] = 0.0
        self.actions[idx] = 0.0
        self.last_actions[idx] = 0.0
        self.last_last_actions[idx] = 0.0
        self.prev_reward[idx] = 0.0
        self.episode_step[idx] = 0
        self.episode_return[idx] = 0.0
        self.prev_feet_vel_z[idx] = 0.0

    def _state(self, truth) -> np.ndarray:
        return assemble_state(truth, self.phase, self.command, self.actions, self.prev_reward,
                              self.cfg, self.standing)

    def _truth(self):
        c = self.cfg
        return self.sim.truth(c.height_scan_x, c.height_scan_y, c.height_scan_dx)

    def _observe(self, state: np.ndarray) -> np.ndarray:
        return corrupt_observation(state, self.streams, self.cfg.noise, self.layout)

    def reset(self) -> tuple[np.ndarray, np.ndarray]:
        self._reset_envs(np.arange(self.n))
        state = self._state(self._truth())
        return self._observe(state), state

    # -- stepping ------------------------------------------------------------

    def _events(self, live: np.ndarray) -> None:
        """Command resampling and scheduled pushes for environments still running."""
        cfg = self.cfg
        dt = cfg.control_dt
        self.command_timer[live] -= dt
        for i in np.flatnonzero(live & (self.command_timer <= 0)):
            self._sample_command(i)
        if not cfg.push.enabled:
            return
        self.push_timer[live] -= dt
        for i in np.flatnonzero(live & (self.push_timer <= 0)):
            rng = self.streams[i]
            p = cfg.push
            force = (rng.uniform(-p.max_force, p.max_force),
                     rng.uniform(-p.max_force, p.max_force) * 0.25)
            torque = rng.uniform(-p.max_torque, p.max_torque)
            self.sim.apply_push(i, force, torque, p.duration)
            self.push_timer[i] = p.interval

    def step(self, actions: np.ndarray) -> StepResult:
        cfg = self.cfg
        dt = cfg.control_dt
        a = np.clip(np.asarray(actions, dtype=float), -ACTION_CLIP, ACTION_CLIP)
        self.last_last_actions = self.last_actions
        self.last_actions = self.actions
        self.actions = a
        out = self.sim.step(self.nominal_pose + cfg.action_scale * a)
        self.phase = (self.phase + dt / cfg.cycle_time) % 1.0
        self.episode_step += 1
        truth = self._truth()
        feet_vel_z = truth["feet_vel_z"]
        feet_acc_z = (feet_vel_z - self.prev_feet_vel_z) / dt
        self.prev_feet_vel_z = feet_vel_z
        mask = stance_mask_array(self.phase, self.standing)
        forces = out["mean_contact_forces"].reshape(self.n, 2, 2).sum(-1)
        ref = foot_reference_array(self.phase, cfg.cycle_time, self.coeffs, cfg.trajectory.T,
                                   self.standing)
        inputs = RewardInputs(
            base_lin_vel=truth["base_lin_vel"], base_ang_vel=truth["ang_vel"],
            base_euler=truth["orientation"], base_height=truth["base_height"],
            command=self.command, feet_height=truth["feet_height"], feet_vel_z=feet_vel_z,
            feet_acc_z=feet_acc_z, feet_speed=truth["feet_speed"], contact_forces=forces,
            stance_mask=mask, joint_pos=truth["joint_pos"], joint_vel=truth["joint_vel"],
            torques=truth["torques"], default_pose=self.nominal_pose, actions=a,
            last_actions=self.last_actions, last_last_actions=self.last_last_actions,
            foot_ref=ref,
        )
        breakdown = step_reward(inputs, cfg.rewards)
        reward = breakdown.total
        diverged = self.sim.diverged()
        reward = np.where(diverged, 0.0, reward)
        self.prev_reward = reward
        self.episode_return += reward

        pitch = truth["orientation"][:, 1]
        fall = (diverged | (truth["base_height"] < cfg.fall_height_ratio * self.nominal_height)
                | (np.abs(pitch) > cfg.fall_pitch))
        timeout = (self.episode_step >= cfg.episode_length) & ~fall
        done = fall | timeout
        if np.any(diverged):
            truth = {k: np.nan_to_num(v, nan=0.0, posinf=0.0, neginf=0.0)
                     for k, v in truth.items()}
        state = self._state(truth)
        final_state = state.copy()
        ep_return = np.where(done, self.episode_return, 0.0)
        ep_length = np.where(done, self.episode_step, 0)
        self._events(~done)
        if np.any(done):
            self._reset_envs(np.flatnonzero(done))
            state = self._state(self._truth())
        obs = self._observe(state)
        return StepResult(obs=obs, state=state, reward=reward, done=done, timeout=timeout,
                          fall=fall, final_state=final_state, episode_return=ep_return,
                          episode_length=ep_length, reward_terms=breakdown.weighted)


# -- process-parallel wrapper ----------------------------------------------------


def _worker(conn, cfg, num_envs, seed, offset, terrain):
    env = LocomotionEnv(cfg, num_envs, seed, offset, terrain)
    while True:
        cmd, payload = conn.recv()
        if cmd == "reset":
            conn.send(env.reset())
        elif cmd == "step":
            conn.send(env.step(payload))
        elif cmd == "close":
            conn.close()
            return


def _concat_results(parts: list[StepResult]) -> StepResult:
    terms = {k: np.concatenate([p.reward_terms[k] for p in parts]) for k in parts[0].reward_terms}
    fields = {f: np.concatenate([getattr(p, f) for p in parts])
              for f in StepResult.__dataclass_fields__ if f != "reward_terms"}
    return StepResult(reward_terms=terms, **fields)


class ParallelEnv:
    """Splits environments across worker processes; same interface as LocomotionEnv."""

    def __init__(self, cfg: EnvConfig, num_envs: int, seed: int, workers: int,
                 terrain: TerrainProfile | None = None):
        if workers < 2:
            raise ValueError("ParallelEnv needs at least two workers")
        self.cfg = cfg
        self.n = num_envs
        self.layout = StateLayout.from_config(cfg)
        chunk = math.ceil(num_envs / workers)
        bounds = [(s, min(s + chunk, num_envs)) for s in range(0, num_envs, chunk)]
        ctx = mp.get_context("fork")
        self._bounds = bounds
        self._conns, self._procs = [], []
        for lo, hi in bounds:
            parent, child = ctx.Pipe()
            proc = ctx.Process(target=_worker, args=(child, cfg, hi - lo, seed, lo, terrain),
                               daemon=True)
            proc.start()
            self._conns.append(parent)
            self._procs.append(proc)

    def reset(self):
        for c in self._conns:
            c.send(("reset", None))
        parts = [c.recv() for c in self._conns]
        return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))

    def step(self, actions: np.ndarray) -> StepResult:
        for c, (lo, hi) in zip(self._conns, self._bounds):
            c.send(("step", actions[lo:hi]))
        return _concat_results([c.recv() for c in self._conns])

    def close(self) -> None:
        for c, p in zip(self._conns, self._procs):
            c.send(("close", None))
            p.join(timeout=5)


def make_env(cfg: EnvConfig, num_envs: int, seed: int, workers: int = 1,
             terrain: TerrainProfile | None = None):
    if workers <= 1:
        return LocomotionEnv(cfg, num_envs, seed, 0, terrain)
    return ParallelEnv(cfg, num_envs, seed, workers, terrain)
