"""Policy graph: implicit encoder, latent estimator, actor/critic LSTMs and MoE heads."""
from __future__ import annotations

import math
from dataclasses import asdict

import numpy as np

from ..envsuite.state import C_DIM, E_DIM, I_DIM, P_DIM
from ..errors import ArgumentError, ConfigurationError
from ..moe import GatingNetwork, MoEHead, extend_experts, moe_forward, shared_gating_eval
from ..netcore import tensor as T
from ..netcore.layers import LSTM, MLP
from ..netcore.params import ParamStore
from .config import NetworkConfig

ACTION_DIM = 6


def _mlp_params(dims):
    return sum(a * b + b for a, b in zip(dims, dims[1:]))


def matched_mono_hidden(net: NetworkConfig, action_dim=ACTION_DIM) -> list[int]:
    """Hidden widths for a single-MLP head pair whose parameter count matches the MoE pair plus gating."""
    h_a, h_c = net.actor_hidden, net.critic_hidden
    target = (net.n_experts * (_mlp_params([h_a, *net.expert_hidden, action_dim])
                               + _mlp_params([h_c, *net.expert_hidden, 1]))
              + _mlp_params([h_a, *net.gating_hidden, net.n_experts]))
    best, best_err = None, None
    for k in range(1, 64 * max(net.expert_hidden + [1])):
        scale = k / max(net.expert_hidden + [1])
        hidden = [max(1, int(round(w * scale))) for w in net.expert_hidden]
        count = _mlp_params([h_a, *hidden, action_dim]) + _mlp_params([h_c, *hidden, 1])
        err = abs(count - target)
        if best_err is None or err < best_err:
            best, best_err = hidden, err
        if count > target:
            break
    return best


class PolicyGraph:
    """All trainable pieces of the locomotion policy, sharing one ParamStore.

    The privileged latent is ``[Enc(i), e]``; the estimator predicts it from
    ``[p, c]``.  The actor LSTM reads ``[latent, p, c]`` where ``latent`` is
    the privileged one (oracle), the estimate (deployment) or a per-row mix
    selected by a 0/1 mask.  The critic always reads the privileged latent.
    Gating scores are computed from the actor state and shared by both heads.
    """

    def __init__(self, net: NetworkConfig | None = None, rng=None, action_dim: int = ACTION_DIM):
        self.net = net or NetworkConfig()
        self.action_dim = action_dim
        self.extensions: list[int] = []
        n = self.net
        s = self.store = ParamStore()
        self.latent_dim = n.enc_out + E_DIM
        self.enc = MLP(s, "enc", I_DIM, n.enc_hidden, n.enc_out, n.activation, rng)
        self.est_lstm = LSTM(s, "est.lstm", P_DIM + C_DIM, n.est_hidden, rng)
        self.est_head = MLP(s, "est.head", n.est_hidden, n.est_head, self.latent_dim, n.activation, rng)
        core_in = self.latent_dim + P_DIM + C_DIM
        self.actor_lstm = LSTM(s, "actor.lstm", core_in, n.actor_hidden, rng)
        self.critic_lstm = LSTM(s, "critic.lstm", core_in, n.critic_hidden, rng)
        if n.head == "moe":
            self.gating = GatingNetwork(s, "gating", n.actor_hidden, n.gating_hidden, n.n_experts, rng,
                                        n.activation)
            self.actor_head = MoEHead(s, "actor.moe", n.actor_hidden, n.expert_hidden, action_dim,
                                      n.n_experts, rng, n.activation, out_gain=0.1)
            self.critic_head = MoEHead(s, "critic.moe", n.critic_hidden, n.expert_hidden, 1, n.n_experts,
                                       rng, n.activation)
        else:
            hidden = matched_mono_hidden(n, action_dim)
            self.gating = None
            self.actor_head = MoEHead(s, "actor.mono", n.actor_hidden, hidden, action_dim, 1, rng,
                                      n.activation, out_gain=0.1)
            self.critic_head = MoEHead(s, "critic.mono", n.critic_hidden, hidden, 1, 1, rng, n.activation)
        s.add("log_std", np.full(action_dim, math.log(n.init_std)))
        self.ln_min_std = math.log(n.min_std)

    # -- structure -----------------------------------------------------
    @property
    def n_experts(self) -> int:
        return self.actor_head.n

    def extend(self, k_new: int, rng):
        """Append ``k_new`` experts to both heads and matching gating columns."""
        if self.gating is None:
            raise ConfigurationError("a monolithic head has no experts to extend")
        self.actor_head, self.gating, self.critic_head = extend_experts(
            self.actor_head, self.gating, k_new, rng, extra_heads=(self.critic_head,))
        self.extensions.append(int(k_new))

    def describe(self) -> dict:
        return {"net": asdict(self.net), "extensions": list(self.extensions), "action_dim": self.action_dim}

    @classmethod
    def from_description(cls, desc: dict, store: ParamStore | None = None) -> "PolicyGraph":
        net = NetworkConfig(**desc["net"])
        pol = cls(net, np.random.default_rng(0), desc.get("action_dim", ACTION_DIM))
        for k in desc.get("extensions", []):
            pol.extend(k, np.random.default_rng(0))
        if store is not None:
            pol.load_store(store)
        return pol

    def load_store(self, store: ParamStore):
        if list(store.names()) != list(self.store.names()):
            raise ConfigurationError("checkpoint parameters do not match the policy structure")
        self.store.load_from(store)
        for n in store.names():
            self.store.set_trainable([n], store.is_trainable(n))

    def clone(self) -> "PolicyGraph":
        return PolicyGraph.from_description(self.describe(), self.store)

    # -- pieces --------------------------------------------------------
    def log_std(self):
        return T.maximum(self.store["log_std"], np.full(self.action_dim, self.ln_min_std))

    def privileged_latent(self, i, e):
        return T.concat([self.enc(T.as_tensor(i)), T.as_tensor(e)], axis=-1)

    def build_latent_stage1(self, p, e, i, c, state):
        """``l = [Enc(i), e, p]`` and the actor state after consuming ``[l, c]``."""
        _check_dims(p, e, i, c)
        l = T.concat([self.privileged_latent(i, e), T.as_tensor(p)], axis=-1)
        h, cc = self.actor_lstm.step(T.concat([l, T.as_tensor(c)], axis=-1), state)
        return l, (h, cc)

    def estimate_latent(self, p, c, state):
        """Estimate of ``[Enc(i), e]`` from proprioception and command; returns (l_hat, new_state)."""
        x = T.concat([T.as_tensor(p), T.as_tensor(c)], axis=-1)
        h, cc = self.est_lstm.step(x, state)
        return self.est_head(h), (h, cc)

    def heads(self, ha, hc, override=None, hook=None):
        if self.gating is None:
            g = np.ones((ha.shape[0], 1))
            return moe_forward(self.actor_head, g, ha), moe_forward(self.critic_head, g, hc), T.Tensor(g)
        return shared_gating_eval(self.gating, self.actor_head, self.critic_head, ha, hc, override, hook)

    def zero_state(self, batch: int) -> dict:
        return {"est": self.est_lstm.zero_state(batch), "actor": self.actor_lstm.zero_state(batch),
                "critic": self.critic_lstm.zero_state(batch)}

    # -- one control step (rollout / evaluation) -------------------------
    def step(self, obs, state: dict, select=None, override=None, hook=None):
        """Advance every recurrent core by one step.

        ``select`` is a per-row 0/1 array (1: privileged latent); ``None``
        means all privileged.  Returns a dict of numpy-backed tensors and the
        new state dict (numpy arrays).
        """
        p, e, i, c = obs.p, obs.e, obs.i, obs.c
        _check_dims(p, e, i, c)
        B = p.shape[0]
        lp = self.privileged_latent(i, e)
        lhat, s_est = self.estimate_latent(p, c, state["est"])
        lat = _select_latent(lp, lhat, np.ones(B) if select is None else select)
        xa = T.concat([lat, T.as_tensor(p), T.as_tensor(c)], axis=-1)
        ha, ca = self.actor_lstm.step(xa, state["actor"])
        xc = T.concat([lp, T.as_tensor(p), T.as_tensor(c)], axis=-1)
        hc, cc = self.critic_lstm.step(xc, state["critic"])
        mu, v, g = self.heads(ha, hc, override, hook)
        new_state = {"est": (s_est[0].data, s_est[1].data), "actor": (ha.data, ca.data),
                     "critic": (hc.data, cc.data)}
        return {"mu": mu, "value": T.reshape(v, (B,)), "gate": g, "l": lp, "l_hat": lhat}, new_state

    # -- a whole rollout window (PPO update) ----------------------------
    def evaluate_sequence(self, seq: dict, init_state: dict, select, resets, override=None):
        """Unroll all cores over a ``(T, B)`` window, batching everything that is not recurrent.

        ``resets[t, b] == 1`` zeroes env b's recurrent state before step t.
        Returns tensors flattened to ``(T*B, ...)``.
        """
        p, e, i, c = seq["p"], seq["e"], seq["i"], seq["c"]
        Tn, B = p.shape[:2]
        flat = lambda a: a.reshape(Tn * B, a.shape[-1])  # noqa: E731
        p2, e2, i2, c2 = flat(p), flat(e), flat(i), flat(c)
        keep = 1.0 - np.asarray(resets, dtype=np.float64)
        lp = self.privileged_latent(i2, e2)
        He = self._unroll(self.est_lstm, T.concat([T.Tensor(p2), T.Tensor(c2)], axis=-1), init_state["est"],
                          keep, Tn, B)
        lhat = self.est_head(He)
        lat = _select_latent(lp, lhat, np.asarray(select, dtype=np.float64).reshape(Tn * B))
        Ha = self._unroll(self.actor_lstm, T.concat([lat, T.Tensor(p2), T.Tensor(c2)], axis=-1),
                          init_state["actor"], keep, Tn, B)
        Hc = self._unroll(self.critic_lstm, T.concat([lp, T.Tensor(p2), T.Tensor(c2)], axis=-1),
                          init_state["critic"], keep, Tn, B)
        mu, v, g = self.heads(Ha, Hc, override)
        return {"mu": mu, "value": T.reshape(v, (Tn * B,)), "gate": g, "l": lp, "l_hat": lhat}

    @staticmethod
    def _unroll(lstm: LSTM, x, state, keep, Tn, B):
        proj = T.reshape(lstm.input_proj(x), (Tn, B, 4 * lstm.hidden))
        h, c = T.Tensor(state[0]), T.Tensor(state[1])
        hs = []
        for t in range(Tn):
            k = keep[t]
            if not np.all(k == 1.0):
                h, c = h * k[:, None], c * k[:, None]
            h, c = lstm.step_proj(proj[t], (h, c))
            hs.append(h)
        return T.reshape(T.stack(hs, axis=0), (Tn * B, lstm.hidden))


def _select_latent(lp, lhat, select):
    """Row-wise ``select * lp + (1 - select) * stop_grad(lhat)``."""
    select = np.asarray(select, dtype=np.float64)
    lhat_d = lhat.detach()
    if np.all(select == 1.0):
        return lp
    if np.all(select == 0.0):
        return lhat_d
    m = select[:, None]
    return lp * m + lhat_d * (1.0 - m)


def _check_dims(p, e, i, c):
    for arr, d, name in ((p, P_DIM, "p"), (e, E_DIM, "e"), (i, I_DIM, "i"), (c, C_DIM, "c")):
        if np.shape(arr)[-1] != d:
            raise ConfigurationError(f"channel {name} has width {np.shape(arr)[-1]}, expected {d}")


def gaussian_log_prob(a, mu, log_std):
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (T.as_tensor(a) - mu) * T.exp(-log_std)
    d = mu.shape[-1]
    return -0.5 * T.sum(T.square(z), axis=-1) - T.sum(log_std) - 0.5 * d * T.LOG_2PI


def gaussian_entropy(log_std):
    d = log_std.shape[-1]
    return T.sum(log_std) + 0.5 * d * (1.0 + T.LOG_2PI)


def gaussian_kl(mu_old, sigma_old, mu_new, sigma_new):
    """Mean KL(old || new) between diagonal Gaussians (numpy)."""
    kl = (np.log(sigma_new / sigma_old)
          + (sigma_old ** 2 + (mu_old - mu_new) ** 2) / (2.0 * sigma_new ** 2) - 0.5)
    return float(np.mean(np.sum(kl, axis=-1)))


def recon_loss(l_hat, l):
    """Mean squared error over every element."""
    l_hat = T.as_tensor(l_hat)
    l = T.as_tensor(l)
    if l_hat.shape != l.shape:
        raise ArgumentError(f"shape mismatch {l_hat.shape} vs {l.shape}")
    return T.mean(T.square(l_hat - l.detach()))


__all__ = ["ACTION_DIM", "PolicyGraph", "gaussian_entropy", "gaussian_kl", "gaussian_log_prob",
           "matched_mono_hidden", "recon_loss"]
