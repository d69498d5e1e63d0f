"""Rollout collection and the joint denoising / PPO / value update."""

from __future__ import annotations

import csv
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..config import Config
from ..nn import Adam, Tensor, build_network, no_grad, stack
from ..nn.checkpoint import save_checkpoint
from ..obs import StateLayout
from ..sim.env import make_env
from .gae import explained_variance, gae, normalize
from .losses import denoise_loss, dwl_total_loss, policy_descent_loss, ppo_surrogate, value_loss

METRIC_COLUMNS = (
    "update", "wall_time", "mean_return", "mean_episode_length", "episodes", "fall_rate",
    "loss_denoise", "loss_policy", "loss_value", "loss_total", "recon_mse",
    "explained_variance", "entropy", "approx_kl", "grad_norm", "action_std",
)
# Spawn keys for learner-side randomness, disjoint from per-environment streams.
ACTION_STREAM = 1 << 30
SHUFFLE_STREAM = (1 << 30) + 1
INIT_STREAM = (1 << 30) + 2
RETURN_WINDOW = 100


class DivergenceError(RuntimeError):
    """A loss or parameter became non-finite."""


def stream_generator(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


@dataclass
class RolloutBuffer:
    """Time-major ``(T, N, ...)`` storage for one rollout.

    ``hidden[t]`` is the encoder state fed in at step ``t`` (already zeroed
    after a termination), so ``hidden[0]`` seeds sequence replay.
    """

    obs: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    hidden: np.ndarray
    advantages: np.ndarray = field(default=None)
    returns: np.ndarray = field(default=None)

    @classmethod
    def allocate(cls, T: int, N: int, obs_dim: int, state_dim: int, action_dim: int,
                 hidden_dim: int) -> "RolloutBuffer":
        return cls(
            obs=np.zeros((T, N, obs_dim)), states=np.zeros((T, N, state_dim)),
            actions=np.zeros((T, N, action_dim)), logp=np.zeros((T, N)),
            rewards=np.zeros((T, N)), values=np.zeros((T, N)),
            dones=np.zeros((T, N), dtype=bool), hidden=np.zeros((T, N, hidden_dim)),
        )


@dataclass
class TrainResult:
    network: object
    metrics: list[dict]
    checkpoint: Path | None = None


class Trainer:
    def __init__(self, cfg: Config, seed: int = 0, workers: int = 1, network=None):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        tr = cfg.train
        self.layout = StateLayout.from_config(cfg.env)
        self.obs_scale = self.layout.scale_vector("obs")
        self.state_scale = self.layout.scale_vector("state")
        self.action_dim = cfg.env.joint_count
        self.net = network or build_network(self.layout.obs_dim, self.layout.state_dim,
                                            self.action_dim, cfg.net,
                                            stream_generator(seed, INIT_STREAM))
        self.opt = Adam(self.net.parameters(), tr.learning_rate, tuple(tr.adam_betas),
                        tr.adam_eps, tr.max_grad_norm)
        self.env = make_env(cfg.env, tr.num_envs, seed, workers)
        self.action_rng = stream_generator(seed, ACTION_STREAM)
        self.shuffle_rng = stream_generator(seed, SHUFFLE_STREAM)
        self.obs, self.state = self.env.reset()
        self.hidden = self.net.gru.initial_state(tr.num_envs)
        self.recent_returns: deque = deque(maxlen=RETURN_WINDOW)
        self.recent_lengths: deque = deque(maxlen=RETURN_WINDOW)
        self.update_index = 0
        self.start_time = time.perf_counter()

    # -- rollout -------------------------------------------------------------

    def _value(self, states: np.ndarray) -> np.ndarray:
        return self.net.value(Tensor(states * self.state_scale)).data[..., 0]

    def collect(self) -> tuple[RolloutBuffer, dict]:
        tr = self.cfg.train
        T, N = tr.horizon, tr.num_envs
        buf = RolloutBuffer.allocate(T, N, self.layout.obs_dim, self.layout.state_dim,
                                     self.action_dim, self.net.hidden_dim)
        falls = 0
        episodes = 0
        with no_grad():
            for t in range(T):
                buf.hidden[t] = self.hidden
                buf.obs[t] = self.obs
                buf.states[t] = self.state
                z, h = self.net.encode(Tensor(self.obs * self.obs_scale), Tensor(self.hidden))
                mean = self.net.action_mean(z).data
                action = self.net.dist.sample(mean, self.action_rng)
                buf.actions[t] = action
                buf.logp[t] = self.net.dist.log_prob_np(mean, action)
                buf.values[t] = self._value(self.state)
                res = self.env.step(action)
                reward = res.reward * tr.reward_scale
                if np.any(res.timeout):
                    boot = self._value(res.final_state[res.timeout])
                    reward = reward.copy()
                    reward[res.timeout] += tr.gamma * boot
                buf.rewards[t] = reward
                buf.dones[t] = res.done
                self.hidden = np.where(res.done[:, None], 0.0, h.data)
                self.obs, self.state = res.obs, res.state
                falls += int(res.fall.sum())
                for i in np.flatnonzero(res.done):
                    self.recent_returns.append(float(res.episode_return[i]))
                    self.recent_lengths.append(int(res.episode_length[i]))
                    episodes += 1
            last_values = self._value(self.state)
        buf.advantages, buf.returns = gae(buf.rewards, buf.values, buf.dones, last_values,
                                          tr.gamma, tr.lam)
        return buf, {"falls": falls, "episodes": episodes}

    # -- optimisation ----------------------------------------------------------

    def _minibatch_loss(self, buf: RolloutBuffer, idx: np.ndarray, adv: np.ndarray):
        tr = self.cfg.train
        net = self.net
        T, B = buf.obs.shape[0], len(idx)
        h = Tensor(buf.hidden[0, idx])
        keep = 1.0 - buf.dones[:, idx].astype(float)[..., None]
        hs = []
        for t in range(T):
            h = net.gru(Tensor(buf.obs[t, idx] * self.obs_scale), h)
            hs.append(h)
            h = h * keep[t]
        H = stack(hs).reshape(T * B, net.hidden_dim)
        feats = net.features(H)
        states = (buf.states[:, idx] * self.state_scale).reshape(T * B, -1)
        actions = buf.actions[:, idx].reshape(T * B, -1)
        mean = net.action_mean(feats)
        logp = net.dist.log_prob(mean, actions)
        old_logp = buf.logp[:, idx].reshape(-1)
        surrogate = ppo_surrogate(logp, old_logp, adv[:, idx].reshape(-1), tr.c1, tr.c2)
        entropy = net.dist.entropy()
        l_pi = policy_descent_loss(surrogate, entropy, tr.entropy_coef)
        values = net.value(Tensor(states)).reshape(-1)
        l_v = value_loss(buf.returns[:, idx].reshape(-1), values, tr.squared_norms)
        dec_in = feats if net.decoder_trains_encoder else feats.detach()
        recon = net.decode(dec_in)
        l_d = denoise_loss(recon, states, dec_in, tr.lambda_r, tr.squared_norms)
        total = dwl_total_loss(l_d, l_pi, l_v, tr.lambda_pi, tr.lambda_v, tr.denoise_coef)
        with no_grad():
            log_ratio = logp.data - old_logp
            approx_kl = float(np.mean(np.exp(log_ratio) - 1.0 - log_ratio))
            recon_mse = float(np.mean((recon.data - states) ** 2))
        stats = {"loss_denoise": l_d.item(), "loss_policy": l_pi.item(), "loss_value": l_v.item(),
                 "loss_total": total.item(), "recon_mse": recon_mse, "entropy": entropy.item(),
                 "approx_kl": approx_kl}
        return total, stats

    def update(self, buf: RolloutBuffer) -> dict:
        tr = self.cfg.train
        adv = normalize(buf.advantages) if tr.normalize_advantage else buf.advantages
        N = buf.obs.shape[1]
        acc: dict[str, list[float]] = {}
        for _ in range(tr.epochs):
            perm = self.shuffle_rng.permutation(N)
            for idx in np.array_split(perm, tr.num_minibatches):
                self.opt.zero_grad()
                total, stats = self._minibatch_loss(buf, np.sort(idx), adv)
                if not math.isfinite(total.item()):
                    raise DivergenceError(
                        f"update {self.update_index}: non-finite loss "
                        + ", ".join(f"{k}={v:.4g}" for k, v in stats.items()))
                total.backward()
                stats["grad_norm"] = self.opt.step()
                for k, v in stats.items():
                    acc.setdefault(k, []).append(v)
        if not all(np.all(np.isfinite(p.data)) for p in self.net.parameters()):
            raise DivergenceError(f"update {self.update_index}: non-finite parameters")
        return {k: float(np.mean(v)) for k, v in acc.items()}

    def step(self) -> dict:
        buf, roll = self.collect()
        losses = self.update(buf)
        self.update_index += 1
        tr = self.cfg.train
        row = {
            "update": self.update_index,
            "wall_time": time.perf_counter() - self.start_time,
            "mean_return": float(np.mean(self.recent_returns)) if self.recent_returns else math.nan,
            "mean_episode_length": (float(np.mean(self.recent_lengths))
                                    if self.recent_lengths else math.nan),
            "episodes": roll["episodes"],
            "fall_rate": roll["falls"] / (tr.horizon * tr.num_envs),
            "explained_variance": explained_variance(buf.values.ravel(), buf.returns.ravel()),
            "action_std": float(np.mean(self.net.dist.std())),
            **losses,
        }
        return {k: row[k] for k in METRIC_COLUMNS}

    def close(self) -> None:
        close = getattr(self.env, "close", None)
        if close is not None:
            close()


class MetricsWriter:
    """Append-only CSV metrics log, one row per update."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.DictWriter(self._fh, fieldnames=METRIC_COLUMNS)
        self._writer.writeheader()
        self._fh.flush()

    def write(self, row: dict) -> None:
        self._writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("update", "episodes") else float(v)) for k, v in r.items()}
            for r in rows]


def train(cfg: Config, seed: int = 0, out_dir: str | Path | None = None, workers: int = 1,
          updates: int | None = None, progress=None) -> TrainResult:
    """Run ``updates`` (default ``cfg.train.max_updates``) learner updates.

    With ``out_dir`` the metrics log, checkpoint and run manifest are written
    there. ``progress`` is called with each metrics row.
    """
    trainer = Trainer(cfg, seed, workers)
    n_updates = cfg.train.max_updates if updates is None else updates
    writer = MetricsWriter(Path(out_dir) / "metrics.csv") if out_dir is not None else None
    rows: list[dict] = []
    ckpt = None
    try:
        for _ in range(n_updates):
            row = trainer.step()
            rows.append(row)
            if writer:
                writer.write(row)
            if progress:
                progress(row)
    finally:
        trainer.close()
        if writer:
            writer.close()
    if out_dir is not None:
        ckpt = save_checkpoint(Path(out_dir) / "checkpoint.npz", trainer.net, cfg.to_dict(),
                               {"seed": seed, "updates": n_updates, "variant": cfg.net.variant})
    return TrainResult(network=trainer.net, metrics=rows, checkpoint=ckpt)
