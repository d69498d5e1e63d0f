"""Run configuration: environment, network and learner settings plus profiles.

Configs are nested dataclasses serialised as JSON. Three built-in profiles
exist: ``paper`` (published values, 12-joint dimensions, impractical on a
workstation), ``desk`` (planar biped, 64 envs) and ``smoke`` (tiny networks
for tests and quick checks).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .gait import QuinticConstraints
from .noise import NoiseSpec, default_specs, spec_from_dict
from .rewards import RewardWeights

COMMAND_DIMS = 3
PROFILES = ("paper", "desk", "smoke")


class ConfigError(ValueError):
    """Invalid configuration value or unknown key."""


@dataclass
class CommandRanges:
    lin_vel_x: tuple[float, float] = (-0.3, 0.6)
    lin_vel_y: tuple[float, float] = (0.0, 0.0)
    yaw_rate: tuple[float, float] = (0.0, 0.0)
    # Commands with |v| below this are treated as "stand still".
    standing_threshold: float = 0.05
    standing_probability: float = 0.1
    resample_time: float = 8.0  # seconds


@dataclass
class PushConfig:
    enabled: bool = False
    interval: float = 6.0   # seconds between pushes
    max_force: float = 60.0  # N
    max_torque: float = 5.0  # N*m
    duration: float = 0.2   # s


@dataclass
class EnvConfig:
    sim: str = "planar"  # planar | stub
    joint_count: int = 6
    height_scan_x: int = 12
    height_scan_y: int = 8
    height_scan_dx: float = 0.1
    height_scan_dy: float = 0.1
    control_rate: int = 100
    inner_rate: int = 500
    cycle_time: float = 1.0
    nominal_pose: list[float] = field(default_factory=lambda: [-0.2, 0.4, -0.2, -0.2, 0.4, -0.2])
    action_scale: float = 0.25
    trajectory: QuinticConstraints = field(default_factory=QuinticConstraints)
    noise: list[NoiseSpec] = field(default_factory=default_specs)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    commands: CommandRanges = field(default_factory=CommandRanges)
    push: PushConfig = field(default_factory=PushConfig)
    episode_length: int = 2400  # control steps
    terrain: str = "flat"
    terrain_seed: int = 0
    fall_height_ratio: float = 0.3
    fall_pitch: float = 1.0
    init_joint_noise: float = 0.05
    ankle_kp: float = 20.0
    ankle_kd: float = 5.0
    leg_kp: float = 200.0
    leg_kd: float = 6.0

    @property
    def height_scan_count(self) -> int:
        return self.height_scan_x * self.height_scan_y

    @property
    def command_dims(self) -> int:
        return COMMAND_DIMS

    @property
    def obs_dim(self) -> int:
        return 2 + COMMAND_DIMS + 2 * self.joint_count + 3 + 3 + self.joint_count

    @property
    def state_dim(self) -> int:
        return (self.obs_dim + 3 + 1 + 6 + 1 + 2 + 12 + 2 + 1 + 1
                + self.joint_count + self.height_scan_count)

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def inner_dt(self) -> float:
        return 1.0 / self.inner_rate

    @property
    def substeps(self) -> int:
        return self.inner_rate // self.control_rate

    def validate(self) -> None:
        if self.joint_count <= 0:
            raise ConfigError("env.joint_count must be positive")
        if self.height_scan_x <= 0 or self.height_scan_y <= 0:
            raise ConfigError("env.height_scan_x/y must be positive")
        if self.cycle_time <= 0:
            raise ConfigError("env.cycle_time must be positive")
        if self.inner_rate % self.control_rate:
            raise ConfigError("env.inner_rate must be a multiple of env.control_rate")
        if len(self.nominal_pose) != self.joint_count:
            raise ConfigError("env.nominal_pose length must equal env.joint_count")
        if self.sim not in ("planar", "stub"):
            raise ConfigError(f"env.sim must be 'planar' or 'stub', got {self.sim!r}")
        if self.sim == "planar" and self.joint_count != 6:
            raise ConfigError("the planar simulator has exactly 6 joints")
        if self.trajectory.T <= 0:
            raise ConfigError("env.trajectory.T must be positive")
        if self.episode_length <= 0:
            raise ConfigError("env.episode_length must be positive")


@dataclass
class NetConfig:
    variant: str = "dwl"  # dwl | ppo (baseline actor without bottleneck)
    gru_hidden: int = 256
    encoder_hidden: list[int] = field(default_factory=lambda: [256])
    latent_dim: int = 24
    decoder_hidden: list[int] = field(default_factory=lambda: [64])
    actor_hidden: list[int] = field(default_factory=lambda: [48])
    critic_hidden: list[int] = field(default_factory=lambda: [512, 512, 256])
    ppo_actor_hidden: list[int] = field(default_factory=lambda: [256, 128])
    init_log_std: float = 0.0

    def validate(self) -> None:
        if self.variant not in ("dwl", "ppo"):
            raise ConfigError(f"net.variant must be 'dwl' or 'ppo', got {self.variant!r}")
        if self.gru_hidden <= 0 or self.latent_dim <= 0:
            raise ConfigError("net.gru_hidden and net.latent_dim must be positive")


@dataclass
class Hyperparams:
    gamma: float = 0.995
    lam: float = 0.95
    entropy_coef: float = 0.005
    c1: float = 0.8
    c2: float = 1.2
    learning_rate: float = 1e-5
    lambda_r: float = 0.002
    lambda_pi: float = 5.0
    lambda_v: float = 5.0
    denoise_coef: float = 1.0
    epochs: int = 2
    num_envs: int = 12288
    horizon: int = 24
    num_minibatches: int = 4
    max_updates: int = 1000
    squared_norms: bool = False
    normalize_advantage: bool = True
    reward_scale: float = 1.0
    max_grad_norm: float = 0.0  # 0 disables clipping
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ConfigError("train.gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ConfigError("train.lam must lie in [0, 1]")
        if not self.c1 < 1 < self.c2:
            raise ConfigError("train.c1 < 1 < train.c2 is required")
        if self.num_envs <= 0 or self.horizon <= 0 or self.epochs <= 0:
            raise ConfigError("train.num_envs, train.horizon and train.epochs must be positive")
        if self.num_minibatches <= 0 or self.num_minibatches > self.num_envs:
            raise ConfigError("train.num_minibatches must lie in [1, num_envs]")
        if self.learning_rate <= 0:
            raise ConfigError("train.learning_rate must be positive")


@dataclass
class Config:
    profile: str = "paper"
    env: EnvConfig = field(default_factory=EnvConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: Hyperparams = field(default_factory=Hyperparams)

    def validate(self) -> "Config":
        self.env.validate()
        self.net.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def paper_config() -> Config:
    """Published settings, with 12 joints and a 96-point scan (47/184 dims)."""
    env = EnvConfig(
        sim="stub",
        joint_count=12,
        height_scan_x=12,
        height_scan_y=8,
        nominal_pose=[0.0] * 12,
        episode_length=2400,
    )
    return Config(profile="paper", env=env, net=NetConfig(), train=Hyperparams())


# The planar model has no passive ankle stability; the published ankle gains
# cannot hold it upright, so planar profiles stiffen the ankles.
PLANAR_ANKLE_GAINS = {"ankle_kp": 400.0, "ankle_kd": 10.0}


def desk_config() -> Config:
    env = EnvConfig(sim="planar", joint_count=6, height_scan_x=12, height_scan_y=8,
                    episode_length=1000, **PLANAR_ANKLE_GAINS)
    env.push = PushConfig(enabled=True)
    net = NetConfig(gru_hidden=128, encoder_hidden=[128], latent_dim=24, decoder_hidden=[64],
                    actor_hidden=[48], critic_hidden=[256, 256, 128], ppo_actor_hidden=[128, 64])
    train = Hyperparams(num_envs=64, learning_rate=5e-4, reward_scale=0.01, max_updates=3000,
                        max_grad_norm=1.0)
    return Config(profile="desk", env=env, net=net, train=train)


def smoke_config() -> Config:
    env = EnvConfig(sim="planar", joint_count=6, height_scan_x=12, height_scan_y=1,
                    episode_length=500, **PLANAR_ANKLE_GAINS)
    net = NetConfig(gru_hidden=48, encoder_hidden=[48], latent_dim=16, decoder_hidden=[48],
                    actor_hidden=[32], critic_hidden=[64, 64], ppo_actor_hidden=[48, 32])
    train = Hyperparams(num_envs=16, learning_rate=1e-3, reward_scale=0.01, max_updates=600,
                        max_grad_norm=1.0, num_minibatches=2)
    return Config(profile="smoke", env=env, net=net, train=train)


def get_profile(name: str) -> Config:
    builders = {"paper": paper_config, "desk": desk_config, "smoke": smoke_config}
    if name not in builders:
        raise ConfigError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    return builders[name]()


# ---------------------------------------------------------------------------
# Overrides and (de)serialisation


def _coerce(value: Any, current: Any, key: str):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, (int, float)) and float(value).is_integer():
            return int(value)
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    if isinstance(current, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(current, str):
        return str(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(current):
            raise ConfigError(f"{key}: expected a list of {len(current)} values")
        return tuple(_coerce(v, c, key) for v, c in zip(value, current))
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        if current and isinstance(current[0], NoiseSpec):
            return [v if isinstance(v, NoiseSpec) else spec_from_dict(v) for v in value]
        if current:
            return [_coerce(v, current[0], key) for v in value]
        return list(value)
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping")
        return _merge(current, value, key)
    return value


def _merge(target, values: dict, prefix: str = ""):
    names = {f.name for f in dataclasses.fields(target)}
    changes = {}
    for k, v in values.items():
        key = f"{prefix}.{k}" if prefix else k
        if k not in names:
            raise ConfigError(f"unknown config field {key!r}")
        changes[k] = _coerce(v, getattr(target, k), key)
    try:
        return dataclasses.replace(target, **changes)
    except ValueError as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from None


def apply_override(cfg: Config, dotted: str, raw_value: str) -> None:
    """Set ``section.field[.sub]`` from a string, validated against the schema."""
    parts = dotted.split(".")
    target = cfg
    for i, part in enumerate(parts[:-1]):
        if not dataclasses.is_dataclass(target) or part not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown config field {'.'.join(parts[:i + 1])!r}")
        target = getattr(target, part)
    last = parts[-1]
    if not dataclasses.is_dataclass(target) or last not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config field {dotted!r}")
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    # Rebuild the path so frozen value types are replaced, not mutated.
    nested: Any = {last: value}
    for part in reversed(parts[:-1]):
        nested = {part: nested}
    merged = _merge(cfg, nested)
    for f in dataclasses.fields(cfg):
        setattr(cfg, f.name, getattr(merged, f.name))


def parse_overrides(items: list[str] | None) -> list[tuple[str, str]]:
    out = []
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        out.append((k.strip(), v.strip()))
    return out


def build_config(profile: str, overrides: list[str] | None = None,
                 config_file: str | Path | None = None) -> Config:
    cfg = get_profile(profile)
    if config_file is not None:
        data = json.loads(Path(config_file).read_text())
        data.pop("profile", None)
        cfg = _merge(cfg, data)
    for key, value in parse_overrides(overrides):
        apply_override(cfg, key, value)
    return cfg.validate()


def config_from_dict(data: dict) -> Config:
    data = dict(data)
    profile = data.pop("profile", "paper")
    cfg = get_profile(profile) if profile in PROFILES else Config()
    return _merge(cfg, data).validate()
