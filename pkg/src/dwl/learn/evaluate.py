"""Policy evaluation and state-estimation reports from trained networks."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import Config, config_from_dict
from ..nn import Tensor, build_network, no_grad
from ..nn.checkpoint import CheckpointError, load_into, read_checkpoint
from ..obs import StateLayout
from ..sim.env import LocomotionEnv
from ..sim.terrain import make_terrain

# Named channels of the estimation report: (channel, column within it or None for all).
ESTIMATE_CHANNELS = {
    "forward_velocity": ("base_lin_vel", 0),
    "base_lin_vel": ("base_lin_vel", None),
    "yaw_rate": ("ang_vel", 2),
    "feet_contact": ("feet_contact", None),
    "height_scan": ("height_scan", None),
}


def load_network(path: str | Path, cfg: Config | None = None):
    """Rebuild the network stored at ``path``; returns ``(network, config, meta)``.

    When ``cfg`` is given its architecture must match the checkpoint's.
    """
    meta, params = read_checkpoint(path)
    stored = config_from_dict(meta["config"])
    if cfg is None:
        cfg = stored
    elif (dataclasses.asdict(cfg.net) != dataclasses.asdict(stored.net)
          or cfg.env.obs_dim != stored.env.obs_dim or cfg.env.state_dim != stored.env.state_dim):
        raise CheckpointError(f"{path}: checkpoint architecture does not match the configuration")
    layout = StateLayout.from_config(cfg.env)
    net = build_network(layout.obs_dim, layout.state_dim, cfg.env.joint_count, cfg.net)
    load_into(net, params)
    return net, cfg, meta


@dataclass
class EpisodeLog:
    states: np.ndarray        # (T, state_dim) true state fed to the critic
    estimates: np.ndarray     # (T, state_dim) decoder reconstruction, raw units
    commands: np.ndarray      # (T, 3)
    rewards: np.ndarray       # (T,)
    reward_terms: dict[str, np.ndarray]
    fell: bool

    @property
    def length(self) -> int:
        return len(self.rewards)


def run_episodes(net, cfg: Config, episodes: int, seed: int, terrain: str | None = None,
                 deterministic: bool = True) -> list[EpisodeLog]:
    """Run one episode in each of ``episodes`` parallel environments."""
    if episodes <= 0:
        return []
    layout = StateLayout.from_config(cfg.env)
    obs_scale = layout.scale_vector("obs")
    state_scale = layout.scale_vector("state")
    profile = make_terrain(terrain or cfg.env.terrain, cfg.env.terrain_seed)
    env = LocomotionEnv(cfg.env, episodes, seed, terrain=profile)
    rng = np.random.default_rng(seed)
    obs, state = env.reset()
    h = np.zeros((episodes, net.hidden_dim))
    active = np.ones(episodes, dtype=bool)
    rec = {k: [] for k in ("states", "estimates", "commands", "rewards", "active")}
    terms: list[dict] = []
    fell = np.zeros(episodes, dtype=bool)
    with no_grad():
        while np.any(active):
            z, hn = net.encode(Tensor(obs * obs_scale), Tensor(h))
            estimate = net.decode(z).data / state_scale
            mean = net.action_mean(z).data
            action = mean if deterministic else net.dist.sample(mean, rng)
            rec["states"].append(state)
            rec["estimates"].append(estimate)
            rec["commands"].append(env.command.copy())
            res = env.step(action)
            rec["rewards"].append(res.reward)
            rec["active"].append(active.copy())
            terms.append(res.reward_terms)
            fell |= active & res.fall
            active = active & ~res.done
            h = np.where(res.done[:, None], 0.0, hn.data)
            obs, state = res.obs, res.state
    mask = np.array(rec["active"])
    logs = []
    for i in range(episodes):
        steps = mask[:, i]
        logs.append(EpisodeLog(
            states=np.array([s[i] for s in rec["states"]])[steps],
            estimates=np.array([e[i] for e in rec["estimates"]])[steps],
            commands=np.array([c[i] for c in rec["commands"]])[steps],
            rewards=np.array([r[i] for r in rec["rewards"]])[steps],
            reward_terms={k: np.array([t[k][i] for t in terms])[steps] for k in terms[0]},
            fell=bool(fell[i]),
        ))
    return logs


@dataclass
class EstimateReport:
    mse: dict[str, float]
    constant_mse: dict[str, float]   # best constant predictor (the pooled truth mean)
    series: list[dict] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [{"channel": k, "mse": self.mse[k], "constant_mse": self.constant_mse[k],
                 "ratio": self.mse[k] / self.constant_mse[k] if self.constant_mse[k] > 0
                 else float("nan")} for k in self.mse]


def _select(layout: StateLayout, arr: np.ndarray, channel: str, col) -> np.ndarray:
    values = arr[:, layout.slices[channel]]
    return values if col is None else values[:, [col]]


def estimate_state(net, cfg: Config, episodes: int, seed: int, terrain: str | None = None,
                   deterministic: bool = True) -> EstimateReport:
    """Compare decoder reconstructions with ground truth on fresh episodes.

    ``deterministic=False`` samples actions as during training.
    """
    layout = StateLayout.from_config(cfg.env)
    logs = run_episodes(net, cfg, episodes, seed, terrain, deterministic)
    if not logs:
        return EstimateReport({}, {}, [])
    truth = np.concatenate([log.states for log in logs])
    est = np.concatenate([log.estimates for log in logs])
    mse, const = {}, {}
    for name, (channel, col) in ESTIMATE_CHANNELS.items():
        t = _select(layout, truth, channel, col)
        e = _select(layout, est, channel, col)
        mse[name] = float(np.mean((e - t) ** 2))
        const[name] = float(np.mean((t - t.mean(axis=0)) ** 2))
    vx = layout.slices["base_lin_vel"].start
    series = []
    for ep, log in enumerate(logs):
        for t in range(log.length):
            series.append({"episode": ep, "step": t,
                           "time": t * cfg.env.control_dt,
                           "true_vx": float(log.states[t, vx]),
                           "estimated_vx": float(log.estimates[t, vx]),
                           "command_vx": float(log.commands[t, 0])})
    return EstimateReport(mse, const, series)


@dataclass
class EvalReport:
    terrain: str
    episodes: int
    success_rate: float
    mean_tracking_error: float
    mean_return: float
    mean_length: float
    per_episode: list[dict] = field(default_factory=list)


def evaluate_policy(net, cfg: Config, episodes: int, seed: int,
                    terrain: str | None = None) -> EvalReport:
    """Success means the episode reaches its time limit without a fall."""
    kind = terrain or cfg.env.terrain
    logs = run_episodes(net, cfg, episodes, seed, kind)
    if not logs:
        return EvalReport(kind, 0, float("nan"), float("nan"), float("nan"), float("nan"), [])
    layout = StateLayout.from_config(cfg.env)
    vx = layout.slices["base_lin_vel"].start
    rows = []
    for i, log in enumerate(logs):
        err = np.abs(log.states[:, vx] - log.commands[:, 0])
        rows.append({"episode": i, "success": int(not log.fell), "length": log.length,
                     "return": float(log.rewards.sum()), "tracking_error": float(err.mean()),
                     **{f"reward_{k}": float(v.sum()) for k, v in log.reward_terms.items()}})
    return EvalReport(
        terrain=kind, episodes=len(logs),
        success_rate=float(np.mean([r["success"] for r in rows])),
        mean_tracking_error=float(np.mean([r["tracking_error"] for r in rows])),
        mean_return=float(np.mean([r["return"] for r in rows])),
        mean_length=float(np.mean([r["length"] for r in rows])),
        per_episode=rows,
    )
