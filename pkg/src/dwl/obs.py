"""Observation and privileged-state vectors.

The state vector is the wire format shared by the simulator, the logs and
the decoder target. Channels are packed in this fixed order::

    clock(2) commands(3) joint_pos(J) joint_vel(J) ang_vel(3) orientation(3)
    last_actions(J) | base_lin_vel(3) friction(1) push_wrench(6) cycle_time(1)
    stance_mask(2) feet_movement(12) feet_contact(2) body_mass(1)
    current_reward(1) torques(J) height_scan(H)

Everything left of ``|`` is also the (clean) observation; the rest is
privileged and is masked out of the observation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .config import COMMAND_DIMS, EnvConfig
from .gait import stance_mask_array
from .noise import NoiseSpec, corrupt_observation

OBS_CHANNELS = ("clock", "commands", "joint_pos", "joint_vel", "ang_vel", "orientation",
                "last_actions")
PRIVILEGED_CHANNELS = ("base_lin_vel", "friction", "push_wrench", "cycle_time", "stance_mask",
                       "feet_movement", "feet_contact", "body_mass", "current_reward", "torques",
                       "height_scan")

# Fixed input/target normalisation used by the learner (multiplies raw values).
CHANNEL_SCALES = {
    "clock": 1.0,
    "commands": 2.0,
    "joint_pos": 1.0,
    "joint_vel": 0.1,
    "ang_vel": 0.5,
    "orientation": 1.0,
    "last_actions": 0.5,
    "base_lin_vel": 2.0,
    "friction": 1.0,
    "push_wrench": 0.02,
    "cycle_time": 1.0,
    "stance_mask": 1.0,
    "feet_movement": 1.0,
    "feet_contact": 1.0,
    "body_mass": 0.02,
    "current_reward": 0.2,
    "torques": 0.02,
    "height_scan": 1.0,
}


class MissingChannelError(KeyError):
    pass


@dataclass(frozen=True)
class StateLayout:
    joint_count: int
    height_scan_count: int

    @classmethod
    def from_config(cls, cfg: EnvConfig) -> "StateLayout":
        return cls(cfg.joint_count, cfg.height_scan_count)

    @cached_property
    def sizes(self) -> dict[str, int]:
        j = self.joint_count
        return {
            "clock": 2,
            "commands": COMMAND_DIMS,
            "joint_pos": j,
            "joint_vel": j,
            "ang_vel": 3,
            "orientation": 3,
            "last_actions": j,
            "base_lin_vel": 3,
            "friction": 1,
            "push_wrench": 6,
            "cycle_time": 1,
            "stance_mask": 2,
            "feet_movement": 12,
            "feet_contact": 2,
            "body_mass": 1,
            "current_reward": 1,
            "torques": j,
            "height_scan": self.height_scan_count,
        }

    @cached_property
    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name in OBS_CHANNELS + PRIVILEGED_CHANNELS:
            out[name] = slice(start, start + self.sizes[name])
            start += self.sizes[name]
        return out

    @property
    def obs_dim(self) -> int:
        return sum(self.sizes[c] for c in OBS_CHANNELS)

    @property
    def state_dim(self) -> int:
        return sum(self.sizes.values())

    @cached_property
    def obs_indices(self) -> np.ndarray:
        return np.concatenate([np.arange(self.slices[c].start, self.slices[c].stop)
                               for c in OBS_CHANNELS])

    @cached_property
    def privileged_indices(self) -> np.ndarray:
        return np.concatenate([np.arange(self.slices[c].start, self.slices[c].stop)
                               for c in PRIVILEGED_CHANNELS])

    def obs_slice(self, name: str) -> slice:
        """Slice of a channel inside the observation vector."""
        if name not in OBS_CHANNELS:
            raise MissingChannelError(f"{name!r} is not an observation channel")
        return self.slices[name]  # observation channels lead the state

    def column_names(self, which: str = "state") -> list[str]:
        channels = OBS_CHANNELS if which == "obs" else OBS_CHANNELS + PRIVILEGED_CHANNELS
        names = []
        for c in channels:
            n = self.sizes[c]
            names.extend([c] if n == 1 else [f"{c}[{i}]" for i in range(n)])
        return names

    def scale_vector(self, which: str = "state") -> np.ndarray:
        channels = OBS_CHANNELS if which == "obs" else OBS_CHANNELS + PRIVILEGED_CHANNELS
        return np.concatenate([np.full(self.sizes[c], CHANNEL_SCALES[c]) for c in channels])

    def pack(self, channels: Mapping[str, np.ndarray]) -> np.ndarray:
        """Pack named channels (each ``(..., size)``) into state vectors."""
        parts = []
        lead = None
        for name in OBS_CHANNELS + PRIVILEGED_CHANNELS:
            if name not in channels:
                raise MissingChannelError(f"state channel {name!r} is missing")
            arr = np.asarray(channels[name], dtype=float)
            size = self.sizes[name]
            if arr.ndim == 0 or arr.shape[-1] != size:
                arr = arr.reshape(arr.shape + (1,)) if size == 1 else arr
            if arr.shape[-1] != size:
                raise ValueError(f"channel {name!r} has width {arr.shape[-1]}, expected {size}")
            lead = arr.shape[:-1] if lead is None else lead
            parts.append(np.broadcast_to(arr, lead + (size,)))
        return np.concatenate(parts, axis=-1)

    def unpack(self, state: np.ndarray) -> dict[str, np.ndarray]:
        state = np.asarray(state)
        if state.shape[-1] != self.state_dim:
            raise ValueError(f"expected {self.state_dim} entries, got {state.shape[-1]}")
        return {name: state[..., sl] for name, sl in self.slices.items()}


SIM_TRUTH_KEYS = ("joint_pos", "joint_vel", "ang_vel", "orientation", "base_lin_vel", "friction",
                  "push_wrench", "feet_pos", "feet_vel", "feet_contact", "body_mass", "torques",
                  "height_scan")


def assemble_state(sim_truth: Mapping[str, np.ndarray], phase, command, last_action,
                   current_reward, config: EnvConfig, standing=None) -> np.ndarray:
    """Build ``(N, state_dim)`` state vectors from simulator ground truth.

    ``sim_truth`` holds batched arrays: ``feet_pos`` and ``feet_vel`` are
    ``(N, 2, 3)`` foot positions relative to the base and foot velocities.
    """
    for key in SIM_TRUTH_KEYS:
        if key not in sim_truth:
            raise MissingChannelError(f"simulator truth is missing channel {key!r}")
    layout = StateLayout.from_config(config)
    phase = np.atleast_1d(np.asarray(phase, dtype=float))
    n = phase.shape[0]
    angle = 2.0 * np.pi * phase
    feet_pos = np.asarray(sim_truth["feet_pos"], dtype=float).reshape(n, 6)
    feet_vel = np.asarray(sim_truth["feet_vel"], dtype=float).reshape(n, 6)
    channels = {
        "clock": np.stack([np.sin(angle), np.cos(angle)], axis=-1),
        "commands": np.asarray(command, dtype=float).reshape(n, COMMAND_DIMS),
        "joint_pos": sim_truth["joint_pos"],
        "joint_vel": sim_truth["joint_vel"],
        "ang_vel": sim_truth["ang_vel"],
        "orientation": sim_truth["orientation"],
        "last_actions": np.asarray(last_action, dtype=float).reshape(n, layout.joint_count),
        "base_lin_vel": sim_truth["base_lin_vel"],
        "friction": np.asarray(sim_truth["friction"], dtype=float).reshape(n, 1),
        "push_wrench": sim_truth["push_wrench"],
        "cycle_time": np.full((n, 1), config.cycle_time),
        "stance_mask": stance_mask_array(phase, standing),
        "feet_movement": np.concatenate([feet_pos, feet_vel], axis=-1),
        "feet_contact": sim_truth["feet_contact"],
        "body_mass": np.asarray(sim_truth["body_mass"], dtype=float).reshape(n, 1),
        "current_reward": np.asarray(current_reward, dtype=float).reshape(n, 1),
        "torques": sim_truth["torques"],
        "height_scan": sim_truth["height_scan"],
    }
    state = layout.pack(channels)
    if not np.all(np.isfinite(state)):
        bad = [k for k, v in layout.unpack(state).items() if not np.all(np.isfinite(v))]
        raise ValueError(f"non-finite values in state channels {bad}")
    return state


def assemble_observation(state: np.ndarray, noise: Sequence[NoiseSpec], rng,
                         config: EnvConfig) -> np.ndarray:
    """Noisy observation for one state vector or a batch (see corrupt_observation)."""
    return corrupt_observation(state, rng, noise, StateLayout.from_config(config))
