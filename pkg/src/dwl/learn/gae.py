"""Generalised advantage estimation over time-major rollouts."""

from __future__ import annotations

import numpy as np


def gae(rewards, values, dones, last_values, gamma: float, lam: float):
    """Advantages and returns for ``(T, N)`` rollouts.

    ``dones[t]`` marks that the episode ended after step ``t``; no value is
    bootstrapped across it. ``last_values`` is ``V`` of the state following
    the final step. Returns ``(advantages, returns)`` with ``R = A + V``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    squeeze = rewards.ndim == 1
    if squeeze:
        rewards, values, dones = rewards[:, None], values[:, None], dones[:, None]
    last_values = np.broadcast_to(np.asarray(last_values, dtype=float), rewards.shape[1:])
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_value = last_values
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    returns = adv + values
    if squeeze:
        return adv[:, 0], returns[:, 0]
    return adv, returns


def normalize(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (x - x.mean()) / (x.std() + eps)


def explained_variance(pred: np.ndarray, target: np.ndarray) -> float:
    var = np.var(target)
    if var == 0:
        return float("nan")
    return float(1.0 - np.var(target - pred) / var)
