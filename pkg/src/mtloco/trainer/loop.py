"""Training loops: oracle stage, probability-annealed stage 2, frozen-expert adaptation."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..envsuite.config import EnvConfig, TerrainSpec
from ..envsuite.env import VectorEnv, make_rng
from ..errors import ConfigurationError, MTLocoError
from ..moe import freeze_experts, gating_param_names
from ..netcore import tensor as T
from ..netcore.optim import Adam
from ..netcore.params import ParamStore, _atomic_dir_write, load_store, save_store
from .config import NetworkConfig, TrainConfig
from .policy import PolicyGraph
from .ppo import RolloutBuffer, compute_gae, ppo_update

TRAINER_STREAM = 7_919  # second seed word for the trainer's own random stream
EVAL_NOISE_STREAM = 104_729  # second seed word for sampled-action evaluation
VALID_STREAM = 65_537  # second seed word for snapshot-selection episodes, disjoint from test seeds


@dataclass(frozen=True)
class PASSchedule:
    """Selection probability ``P_t = max(alpha**t, p_min)``."""

    alpha: float
    p_min: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("alpha must lie in (0, 1]")
        if not 0 <= self.p_min <= 1:
            raise ConfigurationError("p_min must lie in [0, 1]")

    @classmethod
    def from_final(cls, p_final: float, iterations: int, p_min: float = 0.0):
        return cls(p_final ** (1.0 / max(1, iterations)), p_min)

    def __call__(self, t: int) -> float:
        return max(self.alpha ** t, self.p_min)


def probability_selection(P: float, l_hat, l, rng):
    """Row-wise pick of the true latent with probability ``P``, else the estimate.

    Returns ``(latent, mask)`` where ``mask[k] == 1`` marks rows that got ``l``.
    """
    if not 0.0 <= P <= 1.0:
        raise ValueError("P must lie in [0, 1]")
    l, l_hat = np.asarray(l), np.asarray(l_hat)
    mask = (rng.random(l.shape[0]) < P).astype(np.float64)
    return np.where(mask[:, None] > 0, l, l_hat), mask


def _np_log_prob(a, mu, sigma):
    z = (a - mu) / sigma
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sigma)) - 0.5 * a.shape[-1] * T.LOG_2PI


class Trainer:
    """One PPO run over a :class:`VectorEnv`.

    ``stage`` is ``"1"`` (privileged latent), ``"2"`` (annealed selection)
    or ``"adapt"`` (stage-1 loop on an extended policy).
    """

    def __init__(self, policy: PolicyGraph, env_cfg: EnvConfig, cfg: TrainConfig, seed: int = 0,
                 stage: str = "1", metrics_path=None, backend=None, terrain: TerrainSpec | None = None):
        if stage not in ("1", "2", "adapt"):
            raise ConfigurationError(f"unknown stage {stage!r}")
        self.policy, self.env_cfg, self.cfg = policy, env_cfg, cfg
        self.seed, self.stage = seed, stage
        self.env = VectorEnv(env_cfg, seeds=[[seed, k] for k in range(cfg.n_envs)], backend=backend,
                             terrain=terrain)
        self.rng = make_rng([seed, TRAINER_STREAM])
        self.opt = Adam(policy.store, lr=cfg.lr)
        self.lr = cfg.lr
        self.schedule = PASSchedule.from_final(cfg.p_final, cfg.iterations, cfg.p_min)
        self.iteration = 0
        self.episodes: deque = deque(maxlen=cfg.episode_window)
        self.metrics: list[dict] = []
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.obs = None
        self.hstate = None
        self.pending_reset = np.zeros(cfg.n_envs)
        self.best_score = None
        self.best_params = None

    # -- rollout -------------------------------------------------------
    def _start(self):
        if self.obs is None:
            self.obs = self.env.reset()
            self.hstate = self.policy.zero_state(self.cfg.n_envs)

    def selection_probability(self, t: int) -> float:
        return self.schedule(t) if self.stage == "2" else 1.0

    def _reset_hidden(self, flags):
        if not np.any(flags):
            return self.hstate
        keep = (1.0 - flags)[:, None]
        return {k: (h * keep, c * keep) for k, (h, c) in self.hstate.items()}

    def collect(self, P: float) -> tuple[RolloutBuffer, dict]:
        self._start()
        cfg, B = self.cfg, self.cfg.n_envs
        buf = RolloutBuffer(cfg.n_steps, B, self.policy.action_dim)
        buf.init_state = {k: (h.copy(), c.copy()) for k, (h, c) in self.hstate.items()}
        raw_reward = 0.0
        finished = []
        seen = set()
        with T.no_grad():
            for _ in range(cfg.n_steps):
                seen.update(self.env.task_names())
                resets = self.pending_reset
                self.hstate = self._reset_hidden(resets)
                if self.stage == "2":
                    select = (self.rng.random(B) < P).astype(np.float64)
                else:
                    select = np.ones(B)
                out, new_state = self.policy.step(self.obs, self.hstate, select)
                mu = out["mu"].data
                sigma = np.exp(self.policy.log_std().data)
                a = mu + sigma * self.rng.standard_normal(mu.shape)
                logp = _np_log_prob(a, mu, sigma)
                value = out["value"].data
                obs2, rew, done, info = self.env.step(a)
                raw_reward += float(rew.sum())
                r = rew * cfg.reward_scale + cfg.gamma * value * info["timeout"]
                buf.add(p=self.obs.p, e=self.obs.e, i=self.obs.i, c=self.obs.c, actions=a, mu=mu,
                        sigma=np.broadcast_to(sigma, mu.shape), logp=logp, values=value, rewards=r,
                        dones=done, timeouts=info["timeout"], select=select, resets=resets,
                        l=out["l"].data, l_hat=out["l_hat"].data, gates=out["gate"].data)
                finished.extend(info["episodes"])
                self.hstate = new_state
                self.pending_reset = done.astype(np.float64)
                self.obs = obs2
            tail = self._reset_hidden(self.pending_reset)
            out, _ = self.policy.step(self.obs, tail, np.ones(B))
            buf.last_values = out["value"].data.copy()
        buf.tasks = sorted(seen)
        return buf, {"raw_reward": raw_reward / (cfg.n_steps * B), "episodes": finished}

    # -- main loop -----------------------------------------------------
    def train_iteration(self) -> dict:
        it = self.iteration
        P = self.selection_probability(it)
        buf, roll = self.collect(P)
        compute_gae(buf, self.cfg.gamma, self.cfg.lam)
        report, self.lr = ppo_update(self.policy, buf, self.cfg, self.opt, self.rng, self.lr)
        for ep in roll["episodes"]:
            self.episodes.append((ep["return"], ep["length"]))
        rec = {
            "iteration": it,
            "seed": self.seed,
            "mean_reward": _mean([r for r, _ in self.episodes]),
            "mean_episode_length": _mean([n for _, n in self.episodes]),
            "mean_step_reward": roll["raw_reward"],
            "episodes_finished": len(roll["episodes"]),
            "loss_surro": report["surro"], "loss_value": report["value"], "loss_recon": report["recon"],
            "entropy": report["entropy"], "loss_total": report["total"], "kl": report["kl"],
            "grad_norm": report["grad_norm"], "lr": self.lr, "p_select": P,
        }
        if self.cfg.select_every and (it + 1) % self.cfg.select_every == 0:
            rec["valid_return"] = self.validate()
        self.metrics.append(rec)
        if self.metrics_path is not None:
            with open(self.metrics_path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
        self.iteration += 1
        return rec

    def run(self, iterations: int | None = None, callback=None) -> list[dict]:
        end = self.cfg.iterations if iterations is None else iterations
        if self.metrics_path is not None and self.iteration == 0:
            self.metrics_path.parent.mkdir(parents=True, exist_ok=True)
            self.metrics_path.write_text("")
        while self.iteration < end:
            try:
                rec = self.train_iteration()
            except MTLocoError as exc:
                raise type(exc)(f"iteration {self.iteration}: {exc}") from exc
            if callback is not None:
                callback(rec)
        if self.best_params is not None and self.iteration >= self.cfg.iterations:
            best = self.policy.store.unflatten(self.best_params)
            for n in best.names():
                self.policy.store[n].data[...] = best[n].data
        return self.metrics

    def validate(self) -> float:
        """Mean deterministic return on held-out seeds; remembers the best parameters seen."""
        c = self.cfg
        seeds = [[self.seed, VALID_STREAM, k] for k in range(c.select_episodes)]
        res = evaluate_policy(self.policy, self.env_cfg, seeds, self.stage != "2", c.select_steps)
        score = res.mean_return
        if self.best_score is None or score > self.best_score:
            self.best_score, self.best_params = score, self.policy.store.flatten()
        return score

    # -- exact resume ----------------------------------------------------
    def state_arrays(self) -> tuple[ParamStore, dict]:
        st = ParamStore()
        for n in self.opt.m:
            st.add(f"adam.m.{n}", self.opt.m[n], False)
            st.add(f"adam.v.{n}", self.opt.v[n], False)
        env_arrays, env_meta = self.env.get_state() if self.obs is not None else ({}, {})
        for k, v in env_arrays.items():
            st.add(f"env.{k}", v, False)
        if self.hstate is not None:
            for k, (h, c) in self.hstate.items():
                st.add(f"hidden.{k}.h", h, False)
                st.add(f"hidden.{k}.c", c, False)
        st.add("pending_reset", self.pending_reset, False)
        if self.best_params is not None:
            st.add("best_params", self.best_params, False)
        meta = {
            "iteration": self.iteration, "lr": self.lr, "adam_t": self.opt.t, "stage": self.stage,
            "seed": self.seed, "rng": self.rng.bit_generator.state, "env": env_meta,
            "episodes": [list(e) for e in self.episodes], "started": self.obs is not None,
            "best_score": self.best_score,
        }
        return st, meta

    def load_state_arrays(self, st: ParamStore, meta: dict):
        self.iteration = int(meta["iteration"])
        self.lr = float(meta["lr"])
        self.opt.t = int(meta["adam_t"])
        self.opt.sync()
        for n in list(self.opt.m):
            if f"adam.m.{n}" in st:
                self.opt.m[n] = st[f"adam.m.{n}"].data.copy()
                self.opt.v[n] = st[f"adam.v.{n}"].data.copy()
        self.rng.bit_generator.state = meta["rng"]
        self.episodes = deque((tuple(e) for e in meta["episodes"]), maxlen=self.cfg.episode_window)
        self.pending_reset = st["pending_reset"].data.copy()
        self.best_score = meta.get("best_score")
        self.best_params = st["best_params"].data.copy() if "best_params" in st else None
        if meta["started"]:
            arrays = {n[4:]: st[n].data for n in st.names("env.")}
            self.env.set_state(arrays, meta["env"])
            self.obs = self.env.last_obs
            self.hstate = {k: (st[f"hidden.{k}.h"].data.copy(), st[f"hidden.{k}.c"].data.copy())
                           for k in ("est", "actor", "critic")}


def _mean(xs):
    return float(np.mean(xs)) if xs else None


# ---------------------------------------------------------------- stage entry points

def build_policy(net: NetworkConfig | None, seed: int) -> PolicyGraph:
    return PolicyGraph(net or NetworkConfig(), make_rng([seed, 0]))


def train_stage1(cfg: TrainConfig, env_cfg: EnvConfig, seed: int = 0, net: NetworkConfig | None = None,
                 metrics_path=None, policy: PolicyGraph | None = None, backend=None):
    """Oracle training with the privileged latent.  Returns ``(policy, metrics, trainer)``."""
    policy = policy if policy is not None else build_policy(net, seed)
    tr = Trainer(policy, env_cfg, cfg, seed, "1", metrics_path, backend)
    tr.run()
    return policy, tr.metrics, tr


def train_stage2(oracle: PolicyGraph, cfg: TrainConfig, env_cfg: EnvConfig, seed: int = 0,
                 metrics_path=None, backend=None):
    """Start from a copy of the oracle and anneal toward estimator-only latents."""
    policy = oracle.clone()
    tr = Trainer(policy, env_cfg, cfg, seed, "2", metrics_path, backend)
    tr.run()
    return policy, tr.metrics, tr


def adaptation_trainable(policy: PolicyGraph, n_old: int, mode: str) -> list[str]:
    g = policy.gating
    new_cols = range(n_old, g.n)
    names = []
    if mode in ("new", "gating+new"):
        for j in new_cols:
            names += policy.actor_head.expert_names(j) + policy.critic_head.expert_names(j)
    if mode == "new":
        for j in new_cols:
            names += g.column_names(j)
    else:
        names += gating_param_names(g)
    return names


def prepare_adaptation(base: PolicyGraph, k_new: int = 1, mode: str = "new", rng=None) -> PolicyGraph:
    """Clone, extend by ``k_new`` experts and freeze everything outside the trainable set."""
    policy = base.clone()
    n_old = policy.n_experts
    policy.extend(k_new, rng if rng is not None else make_rng([0, 1]))
    freeze_experts(policy.store, policy.actor_head, range(n_old))
    freeze_experts(policy.store, policy.critic_head, range(n_old))
    keep = set(adaptation_trainable(policy, n_old, mode))
    policy.store.set_trainable([n for n in policy.store.names() if n not in keep], False)
    policy.store.set_trainable(sorted(keep), True)
    return policy


def train_adaptation(base: PolicyGraph, cfg: TrainConfig, env_cfg: EnvConfig, seed: int = 0, k_new: int = 1,
                     metrics_path=None, backend=None):
    policy = prepare_adaptation(base, k_new, cfg.adapt_trainable, make_rng([seed, 1]))
    tr = Trainer(policy, env_cfg, cfg, seed, "adapt", metrics_path, backend)
    tr.run()
    return policy, tr.metrics, tr


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalResult:
    returns: np.ndarray
    lengths: np.ndarray
    final_x: np.ndarray
    gates: list | None = None
    tasks: list | None = None

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))


def evaluate_policy(policy: PolicyGraph, env_cfg: EnvConfig, seeds, privileged: bool = True,
                    max_steps: int | None = None, override=None, record_gates: bool = False,
                    terrain: TerrainSpec | None = None, backend=None, stochastic: bool = False) -> EvalResult:
    """One episode per seed.  Mean actions by default; with ``stochastic`` the
    policy samples, using one noise stream per seed so that two policies
    evaluated on the same seeds see the same draws.
    """
    env = VectorEnv(env_cfg, seeds=list(seeds), auto_reset=False, terrain=terrain, backend=backend)
    obs = env.reset()
    n = env.n
    state = policy.zero_state(n)
    select = np.full(n, 1.0 if privileged else 0.0)
    ret = np.zeros(n)
    length = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    gates = [[] for _ in range(n)] if record_gates else None
    steps = env_cfg.dynamics.max_episode_steps if max_steps is None else max_steps
    noise = [make_rng([*np.atleast_1d(s), EVAL_NOISE_STREAM]) for s in seeds] if stochastic else None
    with T.no_grad():
        for _ in range(steps):
            out, state = policy.step(obs, state, select, override)
            if record_gates:
                g = out["gate"].data
                for k in np.flatnonzero(alive):
                    gates[k].append(g[k].copy())
            act = out["mu"].data
            if stochastic:
                std = np.exp(policy.log_std().data)
                act = act + std * np.stack([r.standard_normal(act.shape[1]) for r in noise])
            obs, rew, done, _ = env.step(act)
            ret += np.where(alive, rew, 0.0)
            length += alive
            alive &= ~done
            if not alive.any():
                break
    return EvalResult(ret, length, env.state[:, 0].copy(),
                      [np.array(g) for g in gates] if record_gates else None, env.task_names())


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, policy: PolicyGraph, trainer: Trainer | None = None, extra: dict | None = None):
    """``policy/`` (parameters + structure) and optionally ``train_state/``; written atomically."""
    meta = {"policy": policy.describe(), "version": __version__}
    if extra:
        meta.update(extra)

    def writer(tmp: Path):
        save_store(policy.store, tmp / "policy", meta)
        if trainer is not None:
            st, tmeta = trainer.state_arrays()
            tmeta["train_config"] = asdict(trainer.cfg)
            save_store(st, tmp / "train_state", tmeta)

    _atomic_dir_write(Path(path), writer)


def load_checkpoint(path):
    """Returns ``(policy, meta, train_state)``; ``train_state`` is ``None`` if absent."""
    path = Path(path)
    if not (path / "policy" / "manifest.json").exists():
        raise ConfigurationError(f"no policy checkpoint under {path}")
    store, meta = load_store(path / "policy")
    if "policy" not in meta:
        raise ConfigurationError(f"{path}: checkpoint lacks policy structure")
    policy = PolicyGraph.from_description(meta["policy"], store)
    ts = None
    if (path / "train_state" / "manifest.json").exists():
        ts = load_store(path / "train_state")
    return policy, meta, ts


def resume_trainer(path, env_cfg: EnvConfig, metrics_path=None, backend=None) -> Trainer:
    policy, meta, ts = load_checkpoint(path)
    if ts is None:
        raise ConfigurationError(f"{path}: no training state to resume from")
    st, tmeta = ts
    cfg = TrainConfig(**tmeta["train_config"])
    tr = Trainer(policy, env_cfg, cfg, tmeta["seed"], tmeta["stage"], metrics_path, backend)
    tr.load_state_arrays(st, tmeta)
    return tr


__all__ = ["EvalResult", "PASSchedule", "Trainer", "adaptation_trainable", "build_policy", "evaluate_policy",
           "load_checkpoint", "prepare_adaptation", "probability_selection", "resume_trainer",
           "save_checkpoint", "train_adaptation", "train_stage1", "train_stage2"]
