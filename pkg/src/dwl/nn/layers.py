"""Layers and network stacks built on :mod:`dwl.nn.tensor`."""

from __future__ import annotations

import math
from typing import Iterator, Sequence

import numpy as np

from .tensor import Tensor, affine, elu, gru_cell

INIT_SCHEMES = ("default", "zeros")


def Parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Module:
    """Parameter container; children and parameters are discovered by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for k, p in own.items():
            arr = np.asarray(state[k])
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {k!r} has shape {arr.shape}, expected {p.data.shape}")
            p.data[...] = arr


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, bias: bool = True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = Parameter(np.zeros((in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def init(self, rng: np.random.Generator, scheme: str = "default", gain: float = 1.0):
        """Uniform fan-in init: entries in ``[-gain/sqrt(in), gain/sqrt(in)]``."""
        if scheme == "zeros":
            self.weight.data[...] = 0.0
            if self.bias is not None:
                self.bias.data[...] = 0.0
            return
        bound = gain / math.sqrt(self.in_dim)
        self.weight.data[...] = rng.uniform(-bound, bound, self.weight.shape)
        if self.bias is not None:
            self.bias.data[...] = rng.uniform(-bound, bound, self.bias.shape)

    def __call__(self, x) -> Tensor:
        return affine(x, self.weight, self.bias)


class GRUCell(Module):
    """Gated recurrent unit with separate input-path and hidden-path biases."""

    def __init__(self, input_dim: int, hidden_dim: int):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.w_ih = Parameter(np.zeros((input_dim, 3 * hidden_dim)))
        self.w_hh = Parameter(np.zeros((hidden_dim, 3 * hidden_dim)))
        self.b_ih = Parameter(np.zeros(3 * hidden_dim))
        self.b_hh = Parameter(np.zeros(3 * hidden_dim))

    def init(self, rng: np.random.Generator, scheme: str = "default", gain: float = 1.0):
        """All entries uniform in ``[-1/sqrt(H), 1/sqrt(H)]``."""
        for p in (self.w_ih, self.w_hh, self.b_ih, self.b_hh):
            if scheme == "zeros":
                p.data[...] = 0.0
            else:
                bound = gain / math.sqrt(self.hidden_dim)
                p.data[...] = rng.uniform(-bound, bound, p.shape)

    def initial_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.hidden_dim))

    def __call__(self, x, h) -> Tensor:
        return gru_cell(x, h, self.w_ih, self.w_hh, self.b_ih, self.b_hh)


class MLP(Module):
    """Affine layers with ELU(alpha=1) between them, none after the last."""

    def __init__(self, widths: Sequence[int], alpha: float = 1.0):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.widths = list(widths)
        self.alpha = alpha
        self.layers = [Linear(a, b) for a, b in zip(widths[:-1], widths[1:])]

    def init(self, rng: np.random.Generator, scheme: str = "default", out_gain: float = 1.0):
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            layer.init(rng, scheme, gain=out_gain if last else 1.0)

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = elu(x, self.alpha)
        return x


class GaussianHead(Module):
    """State-independent, learnable log standard deviation per action."""

    LOG_2PI = math.log(2.0 * math.pi)

    def __init__(self, action_dim: int, init_log_std: float = 0.0):
        self.action_dim = action_dim
        self.init_log_std = init_log_std
        self.log_std = Parameter(np.full(action_dim, init_log_std))

    def init(self, rng=None, scheme: str = "default"):
        self.log_std.data[...] = 0.0 if scheme == "zeros" else self.init_log_std

    def std(self) -> np.ndarray:
        return np.exp(self.log_std.data)

    def log_prob(self, mean: Tensor, actions) -> Tensor:
        """Diagonal Gaussian log density summed over the action axis."""
        std = self.log_std.exp()
        z = (Tensor(actions) - mean) / std
        per_dim = z * z * (-0.5) - self.log_std - 0.5 * self.LOG_2PI
        return per_dim.sum(axis=-1)

    def entropy(self) -> Tensor:
        return (self.log_std + 0.5 * (1.0 + self.LOG_2PI)).sum()

    def sample(self, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return mean + self.std() * rng.standard_normal(mean.shape)

    def log_prob_np(self, mean: np.ndarray, actions: np.ndarray) -> np.ndarray:
        std = self.std()
        z = (actions - mean) / std
        return np.sum(-0.5 * z * z - self.log_std.data - 0.5 * self.LOG_2PI, axis=-1)
