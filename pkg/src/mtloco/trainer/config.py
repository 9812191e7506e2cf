"""Network and PPO configuration with validated defaults."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigurationError


@dataclass
class NetworkConfig:
    """Layer widths.  Defaults are a desk-scale shrink of the reference architecture."""

    enc_hidden: list = field(default_factory=lambda: [16])
    enc_out: int = 8
    est_hidden: int = 32
    est_head: list = field(default_factory=lambda: [32])
    actor_hidden: int = 32
    critic_hidden: int = 32
    gating_hidden: list = field(default_factory=lambda: [32])
    expert_hidden: list = field(default_factory=lambda: [32, 32])
    n_experts: int = 6
    head: str = "moe"            # moe | mono (parameter-matched single MLP)
    activation: str = "elu"
    init_std: float = 0.6
    min_std: float = 0.05

    def __post_init__(self):
        if self.head not in ("moe", "mono"):
            raise ConfigurationError("head must be 'moe' or 'mono'")
        if self.n_experts < 1:
            raise ConfigurationError("n_experts must be >= 1")
        if not 0 < self.min_std <= self.init_std:
            raise ConfigurationError("need 0 < min_std <= init_std")
        for name in ("enc_out", "est_hidden", "actor_hidden", "critic_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")

    @classmethod
    def paper_scale(cls):
        """Reference widths; far too slow for CPU training, kept for documentation."""
        return cls(enc_hidden=[32], enc_out=16, est_hidden=256, est_head=[256, 128], actor_hidden=256,
                   critic_hidden=256, gating_hidden=[128], expert_hidden=[256, 128, 128], n_experts=6)


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    desired_kl: float = 0.01
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    value_clip: bool = True
    lr: float = 1e-3
    adaptive_lr: bool = True
    max_grad_norm: float = 1.0
    n_minibatch: int = 4
    n_epochs: int = 4
    n_steps: int = 24
    n_envs: int = 64
    iterations: int = 300
    reward_scale: float = 0.02     # per-step rewards are multiplied by dt
    p_final: float = 0.01          # stage-2 selection probability reached at the last iteration
    p_min: float = 0.01
    adapt_trainable: str = "new"   # new | gating+new | gating
    episode_window: int = 100
    select_every: int = 0          # >0: validate every k iterations and keep the best snapshot
    select_episodes: int = 16
    select_steps: int = 500

    def __post_init__(self):
        if not 0 < self.gamma <= 1 or not 0 < self.lam <= 1:
            raise ConfigurationError("gamma and lam must lie in (0, 1]")
        if self.clip <= 0:
            raise ConfigurationError("clip must be positive")
        if self.lr <= 0 or self.max_grad_norm <= 0 or self.desired_kl <= 0:
            raise ConfigurationError("lr, max_grad_norm and desired_kl must be positive")
        if self.n_minibatch < 1 or self.n_epochs < 1 or self.n_steps < 1 or self.n_envs < 1:
            raise ConfigurationError("batch counts must be >= 1")
        if self.n_minibatch > self.n_envs:
            raise ConfigurationError("n_minibatch cannot exceed n_envs (minibatches split by env)")
        if self.iterations < 0:
            raise ConfigurationError("iterations must be >= 0")
        if not 0 < self.p_final <= 1 or not 0 <= self.p_min <= 1:
            raise ConfigurationError("p_final must lie in (0, 1] and p_min in [0, 1]")
        if self.select_every < 0 or self.select_episodes < 1 or self.select_steps < 1:
            raise ConfigurationError("select_every must be >= 0, select_episodes and select_steps >= 1")
        if self.adapt_trainable not in ("new", "gating+new", "gating"):
            raise ConfigurationError("adapt_trainable must be one of new, gating+new, gating")

    @property
    def pas_alpha(self) -> float:
        return self.p_final ** (1.0 / max(1, self.iterations))

    @classmethod
    def paper_scale(cls):
        return cls(n_envs=4096, iterations=40000)


def config_from_dict(cls, d, where=""):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown {where or cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"{where or cls.__name__}: {exc}") from None


def config_to_dict(cfg):
    return asdict(cfg)


LN_MIN_STD = math.log(0.05)
