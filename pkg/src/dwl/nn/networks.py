"""Encoder-decoder world model with an asymmetric actor-critic.

``DWLNetwork``: obs -> GRU -> head -> latent z; z -> decoder -> state estimate;
z -> actor -> action mean; privileged state -> critic -> value.

``PPOBaseline``: obs -> GRU -> actor MLP -> action mean, with the same
critic and no latent bottleneck. It carries a read-out ``probe`` with the
decoder's widths; the learner fits it on detached GRU features so state
estimates can be compared without letting reconstruction shape the encoder.
"""

from __future__ import annotations

import numpy as np

from ..config import NetConfig
from .layers import MLP, GaussianHead, GRUCell, Module
from .tensor import Tensor

ACTOR_OUT_GAIN = 0.01


class DWLNetwork(Module):
    variant = "dwl"
    # Whether reconstruction gradients may flow back into the encoder.
    decoder_trains_encoder = True

    def __init__(self, obs_dim: int, state_dim: int, action_dim: int, net: NetConfig):
        self.obs_dim, self.state_dim, self.action_dim = obs_dim, state_dim, action_dim
        self.gru = GRUCell(obs_dim, net.gru_hidden)
        self.encoder_head = MLP([net.gru_hidden, *net.encoder_hidden, net.latent_dim])
        self.decoder = MLP([net.latent_dim, *net.decoder_hidden, state_dim])
        self.actor = MLP([net.latent_dim, *net.actor_hidden, action_dim])
        self.dist = GaussianHead(action_dim, net.init_log_std)
        self.critic = MLP([state_dim, *net.critic_hidden, 1])

    @property
    def hidden_dim(self) -> int:
        return self.gru.hidden_dim

    @property
    def has_decoder(self) -> bool:
        return True

    def init_params(self, rng: np.random.Generator, scheme: str = "default") -> None:
        self.gru.init(rng, scheme)
        self.encoder_head.init(rng, scheme)
        self.decoder.init(rng, scheme)
        self.actor.init(rng, scheme, out_gain=ACTOR_OUT_GAIN)
        self.dist.init(rng, scheme)
        self.critic.init(rng, scheme)

    def actor_modules(self) -> list[Module]:
        return [self.gru, self.encoder_head, self.actor, self.dist]

    def actor_param_count(self) -> int:
        return sum(m.param_count() for m in self.actor_modules())

    def encode(self, obs, h):
        """Advance the recurrent state and return ``(z, h')``."""
        obs_t = obs if isinstance(obs, Tensor) else Tensor(obs)
        if obs_t.shape[-1] != self.obs_dim:
            raise ValueError(f"observation has {obs_t.shape[-1]} entries, expected {self.obs_dim}")
        h_new = self.gru(obs_t, h)
        return self.features(h_new), h_new

    def features(self, h) -> Tensor:
        """Map GRU hidden states to the actor's input (the latent z)."""
        return self.encoder_head(h)

    def decode(self, z) -> Tensor:
        return self.decoder(z)

    def action_mean(self, z) -> Tensor:
        return self.actor(z)

    def value(self, state) -> Tensor:
        return self.critic(state)


class PPOBaseline(DWLNetwork):
    variant = "ppo"
    decoder_trains_encoder = False

    def __init__(self, obs_dim: int, state_dim: int, action_dim: int, net: NetConfig):
        self.obs_dim, self.state_dim, self.action_dim = obs_dim, state_dim, action_dim
        self.gru = GRUCell(obs_dim, net.gru_hidden)
        self.actor = MLP([net.gru_hidden, *net.ppo_actor_hidden, action_dim])
        self.dist = GaussianHead(action_dim, net.init_log_std)
        self.critic = MLP([state_dim, *net.critic_hidden, 1])
        self.probe = MLP([net.gru_hidden, *net.decoder_hidden, state_dim])

    @property
    def has_decoder(self) -> bool:
        return False

    def init_params(self, rng: np.random.Generator, scheme: str = "default") -> None:
        self.gru.init(rng, scheme)
        self.actor.init(rng, scheme, out_gain=ACTOR_OUT_GAIN)
        self.dist.init(rng, scheme)
        self.critic.init(rng, scheme)
        self.probe.init(rng, scheme)

    def actor_modules(self) -> list[Module]:
        return [self.gru, self.actor, self.dist]

    def encode(self, obs, h):
        obs_t = obs if isinstance(obs, Tensor) else Tensor(obs)
        if obs_t.shape[-1] != self.obs_dim:
            raise ValueError(f"observation has {obs_t.shape[-1]} entries, expected {self.obs_dim}")
        h_new = self.gru(obs_t, h)
        return h_new, h_new

    def features(self, h) -> Tensor:
        return h

    def decode(self, z) -> Tensor:
        return self.probe(z)


def build_network(obs_dim: int, state_dim: int, action_dim: int, net: NetConfig,
                  rng: np.random.Generator | None = None, scheme: str = "default") -> DWLNetwork:
    cls = DWLNetwork if net.variant == "dwl" else PPOBaseline
    model = cls(obs_dim, state_dim, action_dim, net)
    model.init_params(rng if rng is not None else np.random.default_rng(0), scheme)
    return model
