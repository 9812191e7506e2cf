"""Rollout storage, GAE and the clipped PPO update with the reconstruction loss."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import _kernels
from ..errors import NumericError, StateError
from ..netcore import tensor as T
from ..netcore.optim import Adam
from .config import TrainConfig
from .policy import PolicyGraph, gaussian_entropy, gaussian_kl, gaussian_log_prob, recon_loss

LR_MIN, LR_MAX = 1e-5, 1e-2


@dataclass
class RolloutBuffer:
    """Rectangular ``(n_steps, n_envs)`` storage for one rollout window."""

    n_steps: int
    n_envs: int
    action_dim: int = 6
    fields_: dict = field(default_factory=dict)
    init_state: dict | None = None
    last_values: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    t: int = 0
    tasks: list = field(default_factory=list)

    def __getitem__(self, k):
        return self.fields_[k]

    def add(self, **rec):
        if self.t >= self.n_steps:
            raise StateError("rollout buffer is full")
        for k, v in rec.items():
            v = np.asarray(v, dtype=np.float64)
            if k not in self.fields_:
                self.fields_[k] = np.zeros((self.n_steps, *v.shape))
            self.fields_[k][self.t] = v
        self.t += 1

    @property
    def full(self):
        return self.t == self.n_steps

    def __len__(self):
        return self.t * self.n_envs


def gae_reference(rewards, values, dones, last_values, gamma, lam):
    """Per-t discounted sum of TD residuals, evaluated in nested (Horner) form.

    Each A_t is rebuilt from scratch by folding delta_{T-1}..delta_t, so no
    value is shared between different t.
    """
    nt, n = rewards.shape
    adv = np.zeros((nt, n))
    for b in range(n):
        for t in range(nt):
            acc = 0.0
            for k in range(nt - 1, t - 1, -1):
                nd = 1.0 - dones[k, b]
                nv = last_values[b] if k == nt - 1 else values[k + 1, b]
                delta = rewards[k, b] + gamma * nd * nv - values[k, b]
                acc = delta + gamma * lam * nd * acc
            adv[t, b] = acc
    return adv


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float, backend=None):
    """Fill ``buffer.advantages`` and ``buffer.returns``; returns both."""
    if buffer.t == 0 or buffer.last_values is None:
        raise StateError("GAE needs a filled buffer with bootstrap values")
    r, v, d = buffer["rewards"][:buffer.t], buffer["values"][:buffer.t], buffer["dones"][:buffer.t]
    adv = _kernels.gae(r, v, d, buffer.last_values, gamma, lam, backend=backend)
    buffer.advantages = adv
    buffer.returns = adv + v
    return adv, buffer.returns


def normalize(x):
    return (x - x.mean()) / (x.std() + 1e-8)


def adaptive_lr(kl: float, desired_kl: float, lr: float) -> float:
    if lr <= 0:
        raise ValueError("lr must be positive")
    if kl > 2.0 * desired_kl:
        lr = lr / 1.5
    elif kl < desired_kl / 2.0:
        lr = lr * 1.5
    return min(LR_MAX, max(LR_MIN, lr))


def ppo_loss_terms(logp, old_logp, adv, values, old_values, returns, entropy, l_hat, l, cfg: TrainConfig):
    """Scalar loss tensors.  ``logp``, ``values``, ``entropy`` and ``l_hat`` carry gradients."""
    ratio = T.exp(logp - old_logp)
    s1 = ratio * adv
    s2 = T.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    surro = -T.mean(T.minimum(s1, s2))
    if cfg.value_clip:
        v_clip = old_values + T.clip(values - old_values, -cfg.clip, cfg.clip)
        value = T.mean(T.maximum(T.square(values - returns), T.square(v_clip - returns)))
    else:
        value = T.mean(T.square(values - returns))
    recon = recon_loss(l_hat, l)
    total = surro + cfg.value_coef * value + recon - cfg.entropy_coef * entropy
    return {"surro": surro, "value": value, "recon": recon, "entropy": entropy, "total": total}


def _slice(buf: RolloutBuffer, envs):
    seq = {k: buf[k][:, envs] for k in ("p", "e", "i", "c")}
    init = {k: (s[0][envs], s[1][envs]) for k, s in buf.init_state.items()}
    return seq, init


def minibatch_losses(policy: PolicyGraph, buf: RolloutBuffer, envs, adv_norm, cfg: TrainConfig, override=None):
    seq, init = _slice(buf, envs)
    out = policy.evaluate_sequence(seq, init, buf["select"][:, envs], buf["resets"][:, envs], override)
    flat = lambda a: a[:, envs].reshape(-1, *a.shape[2:])  # noqa: E731
    log_std = policy.log_std()
    logp = gaussian_log_prob(flat(buf["actions"]), out["mu"], log_std)
    terms = ppo_loss_terms(
        logp, flat(buf["logp"]), adv_norm[:, envs].reshape(-1), out["value"], flat(buf["values"]),
        buf.returns[:, envs].reshape(-1), gaussian_entropy(log_std), out["l_hat"], out["l"], cfg)
    return terms, out, log_std


def ppo_update(policy: PolicyGraph, buf: RolloutBuffer, cfg: TrainConfig, opt: Adam, rng, lr: float,
               override=None):
    """Run ``n_epochs`` passes of ``n_minibatch`` env-split minibatches.

    Returns ``(report, lr)`` where the report averages each loss component
    over all minibatches and ``lr`` is the (possibly adapted) learning rate.
    """
    if buf.advantages is None:
        raise StateError("ppo_update before compute_gae")
    adv_norm = normalize(buf.advantages)
    sums = {"surro": 0.0, "value": 0.0, "recon": 0.0, "entropy": 0.0, "total": 0.0, "kl": 0.0,
            "grad_norm": 0.0}
    count = 0
    for _ in range(cfg.n_epochs):
        perm = rng.permutation(buf.n_envs)
        for envs in np.array_split(perm, cfg.n_minibatch):
            envs = np.sort(envs)
            policy.store.zero_grad()
            terms, out, log_std = minibatch_losses(policy, buf, envs, adv_norm, cfg, override)
            if not np.isfinite(terms["total"].item()):
                raise NumericError("non-finite PPO loss; iteration aborted")
            sigma_new = np.exp(log_std.data)
            kl = gaussian_kl(buf["mu"][:, envs].reshape(-1, policy.action_dim),
                             buf["sigma"][:, envs].reshape(-1, policy.action_dim),
                             out["mu"].data, sigma_new)
            if cfg.adaptive_lr:
                lr = adaptive_lr(kl, cfg.desired_kl, lr)
            T.backward(terms["total"])
            norm = opt.step(policy.store.grads(), clip_norm=cfg.max_grad_norm, lr=lr)
            for k in ("surro", "value", "recon", "entropy", "total"):
                sums[k] += terms[k].item()
            sums["kl"] += kl
            sums["grad_norm"] += norm
            count += 1
    report = {k: v / count for k, v in sums.items()}
    report["lr"] = lr
    return report, lr


__all__ = ["LR_MAX", "LR_MIN", "RolloutBuffer", "adaptive_lr", "compute_gae", "gae_reference",
           "minibatch_losses", "normalize", "ppo_loss_terms", "ppo_update"]
