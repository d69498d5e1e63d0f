"""Observation model: masking of privileged channels plus domain randomization.

Sensor perturbations are drawn every control step and corrupt the
observation vector. Dynamics perturbations are drawn once per episode and
are consumed by the simulator, never by the observation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .obs import StateLayout

OPERATORS = ("additive", "scaling", "latency", "resample")
FREQUENCIES = ("per_episode", "per_step")
SENSOR_CHANNELS = ("joint_pos", "joint_vel", "ang_vel", "orientation")


class NoiseSpecError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    name: str
    unit: str
    lo: float
    hi: float
    operator: str
    frequency: str

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise NoiseSpecError(f"{self.name}: unknown operator {self.operator!r}")
        if self.frequency not in FREQUENCIES:
            raise NoiseSpecError(f"{self.name}: unknown draw frequency {self.frequency!r}")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or self.lo > self.hi:
            raise NoiseSpecError(f"{self.name}: range [{self.lo}, {self.hi}] is not ordered")
        if self.operator == "scaling" and self.lo <= 0:
            raise NoiseSpecError(f"{self.name}: scaling range must be positive")

    @property
    def factor_divisor(self) -> float:
        # Percent ranges become multiplicative fractions.
        return 100.0 if self.unit == "%" else 1.0

    def as_dict(self) -> dict:
        return {"name": self.name, "unit": self.unit, "lo": self.lo, "hi": self.hi,
                "operator": self.operator, "frequency": self.frequency}


def default_specs() -> list[NoiseSpec]:
    """The randomization table used for training, in its published units."""
    return [
        NoiseSpec("joint_pos", "rad", -0.3, 0.3, "additive", "per_step"),
        NoiseSpec("joint_vel", "rad/s", -1.0, 1.0, "additive", "per_step"),
        NoiseSpec("ang_vel", "rad/s", -0.1, 0.1, "additive", "per_step"),
        NoiseSpec("orientation", "rad", -0.1, 0.1, "additive", "per_step"),
        NoiseSpec("system_delay", "ms", 0.0, 10.0, "latency", "per_episode"),
        NoiseSpec("friction", "-", 0.2, 2.0, "resample", "per_episode"),
        NoiseSpec("motor_offset", "rad", -0.05, 0.05, "additive", "per_episode"),
        NoiseSpec("motor_strength", "%", 90.0, 110.0, "scaling", "per_episode"),
        NoiseSpec("payload", "kg", -5.0, 20.0, "additive", "per_episode"),
        NoiseSpec("pd_factors", "%", 80.0, 120.0, "scaling", "per_episode"),
    ]


def zero_specs() -> list[NoiseSpec]:
    """Identity randomization: every range collapsed onto its neutral value."""
    out = []
    for s in default_specs():
        if s.operator == "scaling":
            lo = hi = 100.0
        elif s.operator == "resample":
            lo = hi = 1.0
        else:
            lo = hi = 0.0
        out.append(NoiseSpec(s.name, s.unit, lo, hi, s.operator, s.frequency))
    return out


def spec_from_dict(d: dict) -> NoiseSpec:
    try:
        return NoiseSpec(str(d["name"]), str(d.get("unit", "-")), float(d["lo"]), float(d["hi"]),
                         str(d["operator"]), str(d["frequency"]))
    except KeyError as exc:
        raise NoiseSpecError(f"noise spec missing field {exc.args[0]!r}: {d}") from None


class RngStream:
    """Independent, reproducible random stream for one environment."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def uniform(self, lo, hi, size=None):
        return self.generator.uniform(lo, hi, size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


@dataclass
class RandomizedDynamics:
    friction: float = 1.0
    motor_offset: np.ndarray = field(default_factory=lambda: np.zeros(0))
    motor_strength: float = 1.0
    payload: float = 0.0
    pd_factors: tuple[float, float] = (1.0, 1.0)
    system_delay: float = 0.0  # ms

    def as_row(self) -> dict[str, float]:
        row = {
            "friction": self.friction,
            "motor_strength": self.motor_strength,
            "payload": self.payload,
            "kp_factor": self.pd_factors[0],
            "kd_factor": self.pd_factors[1],
            "system_delay": self.system_delay,
        }
        for j, off in enumerate(self.motor_offset):
            row[f"motor_offset_{j}"] = float(off)
        return row


def _spec_map(specs: Sequence[NoiseSpec]) -> dict[str, NoiseSpec]:
    return {s.name: s for s in specs}


def sample_dynamics(rng: RngStream, specs: Sequence[NoiseSpec], joint_count: int,
                    payload_scale: float = 1.0) -> RandomizedDynamics:
    """One uniform draw for every per-episode parameter.

    ``payload_scale`` rescales the payload range to a model whose mass
    differs from the reference robot. Draw order is fixed so streams replay.
    """
    by_name = _spec_map(specs)
    dyn = RandomizedDynamics(motor_offset=np.zeros(joint_count))

    def draw(name, size=None):
        s = by_name.get(name)
        if s is None:
            return None
        return rng.uniform(s.lo, s.hi, size) / s.factor_divisor

    friction = draw("friction")
    if friction is not None:
        dyn.friction = float(friction)
    offsets = draw("motor_offset", joint_count)
    if offsets is not None:
        dyn.motor_offset = np.asarray(offsets, dtype=float)
    strength = draw("motor_strength")
    if strength is not None:
        dyn.motor_strength = float(strength)
    payload = draw("payload")
    if payload is not None:
        dyn.payload = float(payload) * payload_scale
    pd = draw("pd_factors", 2)
    if pd is not None:
        dyn.pd_factors = (float(pd[0]), float(pd[1]))
    delay = draw("system_delay")
    if delay is not None:
        dyn.system_delay = float(delay)
    return dyn


def apply_operator(spec: NoiseSpec, nominal, draw):
    """Apply one sampled value to a nominal quantity according to its operator."""
    if spec.operator == "additive":
        return nominal + draw
    if spec.operator == "scaling":
        return nominal * draw
    if spec.operator == "resample":
        return draw
    raise NoiseSpecError(f"{spec.name}: operator {spec.operator!r} has no value form")


def sensor_noise(rng: RngStream, specs: Sequence[NoiseSpec], layout: "StateLayout") -> np.ndarray:
    """Additive per-step perturbation for one observation vector."""
    noise = np.zeros(layout.obs_dim)
    for s in specs:
        if s.frequency != "per_step" or s.name not in SENSOR_CHANNELS:
            continue
        sl = layout.obs_slice(s.name)
        if s.lo == s.hi:
            noise[sl] = s.lo
        else:
            noise[sl] = rng.uniform(s.lo, s.hi, sl.stop - sl.start)
    return noise


def corrupt_observation(state, rng, specs: Sequence[NoiseSpec], layout: "StateLayout") -> np.ndarray:
    """Mask privileged channels and perturb sensor channels.

    ``state`` is one vector of length ``state_dim`` or a batch ``(N, state_dim)``;
    for a batch ``rng`` is a sequence of per-environment streams.
    """
    state = np.asarray(state, dtype=float)
    if state.shape[-1] != layout.state_dim:
        raise ValueError(
            f"state vector has {state.shape[-1]} entries, layout expects {layout.state_dim}")
    obs = state[..., layout.obs_indices]
    if state.ndim == 1:
        streams = [rng]
        obs2 = obs[None, :]
    else:
        streams = list(rng) if not isinstance(rng, RngStream) else None
        if streams is None or len(streams) != state.shape[0]:
            raise ValueError("a batch of states needs one RngStream per row")
        obs2 = obs
    noisy = obs2 + np.stack([sensor_noise(r, specs, layout) for r in streams])
    return noisy[0] if state.ndim == 1 else noisy


def delay_steps(delay_ms, control_dt: float):
    """Whole inner-loop steps covered by ``delay_ms`` (floored)."""
    step_ms = control_dt * 1000.0
    return np.floor(np.asarray(delay_ms, dtype=float) / step_ms + 1e-9).astype(int)


def apply_delay(action_history, delay_ms: float, control_dt: float):
    """Action in effect ``delay_ms`` ago; ``action_history[-1]`` is current."""
    k = int(delay_steps(delay_ms, control_dt))
    if k >= len(action_history):
        raise ValueError(f"history of {len(action_history)} steps is too short for {delay_ms} ms")
    return action_history[-1 - k]
