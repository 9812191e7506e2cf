"""Environment operations and the batched, seedable vector environment."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .. import _kernels
from .._kernels import _fallback
from .._kernels import layout as LY
from ..errors import ArgumentError, ContractError
from .config import DynamicsConfig, EnvConfig, RandomizationRanges, TaskSpec, TerrainSpec
from .state import (C_DIM, E_DIM, I_DIM, P_DIM, Command, EnvState, ObservationBundle, privileged,
                    proprio_truth)
from .terrain import RealizedTrack, generate_track


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


# ---------------------------------------------------------------- rewards / termination

def _terms_dict(terms):
    return dict(zip(LY.TERM_NAMES, terms))


def reward_quadruped(state: EnvState, cmd: Command, action, done: bool, dyn: DynamicsConfig | None = None,
                     last_action=None):
    """Quadrupedal reward for a post-step ``state``.  Returns ``(total, breakdown)``."""
    if cmd.gait != 0:
        raise ContractError("reward_quadruped called with a bipedal command")
    return _reward(state, cmd, action, done, dyn, last_action)


def reward_bipedal(state: EnvState, cmd: Command, action, done: bool, dyn: DynamicsConfig | None = None,
                   last_action=None):
    """Bipedal reward for a post-step ``state``.  Returns ``(total, breakdown)``."""
    if cmd.gait != 1:
        raise ContractError("reward_bipedal called with a quadrupedal command")
    return _reward(state, cmd, action, done, dyn, last_action)


def _reward(state, cmd, action, done, dyn, last_action):
    p = (dyn or DynamicsConfig()).params_array().tolist()
    a = [min(1.0, max(-1.0, float(v))) for v in np.asarray(action, dtype=np.float64)]
    pa = list(np.asarray(state.prev_action if last_action is None else last_action, dtype=np.float64))
    supp = state.suppress_limb
    lsupp = float(state.limbs[supp]) if supp >= 0 else 0.0
    terms = _fallback.reward_terms(float(cmd.gait), state.v, cmd.v_cmd, a, pa, list(state.limb_vel),
                                   list(state.limb_acc), state.theta_rate, state.theta, state.z_base,
                                   lsupp, supp, bool(done), p)
    total = 0.0
    for t in terms:
        total += t
    return total, _terms_dict(terms)


def check_termination(state: EnvState, g: int, t: float, dyn: DynamicsConfig | None = None) -> bool:
    p = (dyn or DynamicsConfig()).params_array().tolist()
    return bool(_fallback.terminated(state.theta, state.z_base, float(g), t, float(state.fell), p))


def step_state(state: EnvState, action, cmd: Command, track: RealizedTrack, dyn: DynamicsConfig | None = None,
               noise: float = 0.0, backend=None):
    """Single-state transition.  Returns ``(state', reward, done, info)``."""
    dyn = dyn or DynamicsConfig()
    action = np.asarray(action, dtype=np.float64).reshape(1, LY.ACTION_DIM)
    if not np.all(np.isfinite(action)):
        raise ArgumentError("action must be finite")
    s = state.to_vector()
    s[LY.VCMD], s[LY.G] = cmd.v_cmd, float(cmd.gait)
    segs = track.segment_array()
    ns, terms, rew, done, timeout = _kernels.step_batch(
        s[None], action, np.array([noise]), segs[None], np.array([segs.shape[0]]), track.noise[None],
        np.array([track.noise.size]), dyn.params_array(), backend=backend)
    info = {"terms": _terms_dict(terms[0].tolist()), "timeout": bool(timeout[0]),
            "blocked": bool(ns[0, LY.BLOCKED] > 0.5)}
    return EnvState.from_vector(ns[0]), float(rew[0]), bool(done[0]) or bool(timeout[0]), info


# ---------------------------------------------------------------- observation

class DelayBuffer:
    """Ring buffer of past proprioception per instance."""

    def __init__(self, n: int, depth: int, dim: int = P_DIM):
        self.depth = max(1, depth)
        self.buf = np.zeros((n, self.depth, dim))
        self.head = np.zeros(n, dtype=np.int64)

    def fill(self, k: int, p: np.ndarray):
        self.buf[k, :] = p
        self.head[k] = 0

    def push(self, k: int, p: np.ndarray):
        self.head[k] = (self.head[k] + 1) % self.depth
        self.buf[k, self.head[k]] = p

    def read(self, k: int, delay: int) -> np.ndarray:
        if delay >= self.depth:
            raise ArgumentError(f"delay {delay} exceeds buffer depth {self.depth}")
        return self.buf[k, (self.head[k] - delay) % self.depth]


def latency_steps(latency: float, dt: float) -> int:
    return int(math.floor(latency / dt + 0.5))


def observe(states: np.ndarray, buffer: DelayBuffer, delays, noise_draws, amps) -> ObservationBundle:
    """Delayed, noisy proprioception plus noiseless privileged channels.

    ``noise_draws`` are standard-normal samples ``(n, P_DIM)``; they are
    scaled by the per-channel amplitudes.
    """
    n = states.shape[0]
    p = np.empty((n, P_DIM))
    for k in range(n):
        p[k] = buffer.read(k, int(delays[k]))
    p = p + noise_draws * amps
    e, i, c = privileged(states)
    return ObservationBundle(p, e, i, c)


# ---------------------------------------------------------------- reset

def sample_initial_state(task: TaskSpec, dyn: DynamicsConfig, ranges: RandomizationRanges, rng,
                         v_cmd: float | None = None) -> tuple[EnvState, float]:
    """Draw the per-episode physical parameters and initial posture.  Returns (state, latency)."""
    mu = rng.uniform(*ranges.friction)
    vgain = rng.uniform(*ranges.velocity_gain)
    motor = rng.uniform(*ranges.motor_strength)
    scales = rng.uniform(ranges.init_scale[0], ranges.init_scale[1], size=5)
    theta0 = rng.uniform(*ranges.init_theta)
    latency = rng.uniform(*ranges.latency)
    cmd = rng.uniform(*task.v_cmd)
    limbs = np.clip(0.5 * scales[:4], 0.0, 1.0)
    st = EnvState(
        z_base=dyn.z_nominal * scales[4], limbs=limbs, theta=theta0, friction=mu, gait=task.gait,
        motor=motor, velocity_gain=vgain, v_cmd=cmd if v_cmd is None else v_cmd,
        suppress_limb=task.suppress_limb,
    )
    if task.gait == 0:
        st.contact = dyn.contact_load * (1.0 - limbs)
    else:
        st.contact = np.concatenate([np.zeros(2), 2.0 * dyn.contact_load * (1.0 - limbs[2:])])
    return st, latency


def reset(spec: TerrainSpec, ranges: RandomizationRanges, task: TaskSpec, rng, dyn: DynamicsConfig | None = None):
    """Stand-alone reset: returns ``(EnvState, ObservationBundle, RealizedTrack)``."""
    dyn = dyn or DynamicsConfig()
    track = generate_track(spec, rng, dyn.grid_res)
    st, latency = sample_initial_state(task, dyn, ranges, rng)
    vec = st.to_vector()[None]
    buf = DelayBuffer(1, latency_steps(ranges.latency[1], dyn.dt) + 1)
    buf.fill(0, proprio_truth(vec)[0])
    draws = rng.standard_normal((1, P_DIM))
    obs = observe(vec, buf, [latency_steps(latency, dyn.dt)], draws, ranges.noise.vector())
    return st, obs.row(0), track


# ---------------------------------------------------------------- vector env

class VectorEnv:
    """``n`` independent instances stepped through one kernel call.

    Instance ``k`` owns ``make_rng(seeds[k])`` and draws from nothing else,
    so it behaves exactly like a one-instance env with the same seed.  With
    ``auto_reset`` a finished instance starts a new episode (continuing its
    own random stream); otherwise termination is absorbing.

    ``terrain`` pins every episode to one explicit track instead of sampling
    from the task's template.
    """

    def __init__(self, config: EnvConfig, n: int | None = None, seeds=None, auto_reset: bool = True,
                 terrain: TerrainSpec | None = None, backend=None):
        if seeds is None:
            if n is None or n < 1:
                raise ArgumentError("need n >= 1 or explicit seeds")
            seeds = list(range(n))
        seeds = list(seeds)
        if n is not None and n != len(seeds):
            raise ArgumentError("len(seeds) != n")
        if not seeds:
            raise ArgumentError("n must be >= 1")
        self.cfg = config
        self.dyn = config.dynamics
        self.ranges = config.randomization
        self.n = len(seeds)
        self.seeds = seeds
        self.auto_reset = auto_reset
        self.fixed_terrain = terrain
        self.backend = backend
        self.tasks = config.task_specs()
        w = np.asarray(config.task_weights, dtype=np.float64)
        self._task_cdf = np.cumsum(w / w.sum())
        self.params = self.dyn.params_array()
        self.amps = self.ranges.noise.vector()
        self.rngs = [make_rng(s) for s in seeds]
        self.state = np.zeros((self.n, LY.STATE_DIM))
        self.segs = np.zeros((self.n, 1, LY.SEG_WIDTH))
        self.nseg = np.ones(self.n, dtype=np.int64)
        self.hgrid = np.zeros((self.n, 1))
        self.ngrid = np.ones(self.n, dtype=np.int64)
        self.buffer = DelayBuffer(self.n, latency_steps(self.ranges.latency[1], self.dyn.dt) + 1)
        self.delays = np.zeros(self.n, dtype=np.int64)
        self.task_idx = np.zeros(self.n, dtype=np.int64)
        self.tracks: list[RealizedTrack | None] = [None] * self.n
        self.ep_return = np.zeros(self.n)
        self.ep_length = np.zeros(self.n, dtype=np.int64)
        self.last_obs: ObservationBundle | None = None

    # -- helpers -------------------------------------------------------
    def _pick_task(self, rng) -> int:
        if len(self.tasks) == 1:
            return 0
        u = rng.random()
        return int(min(np.searchsorted(self._task_cdf, u, side="right"), len(self.tasks) - 1))

    def _install_track(self, k, track: RealizedTrack):
        segs = track.segment_array()
        if segs.shape[0] > self.segs.shape[1]:
            self.segs = np.pad(self.segs, ((0, 0), (0, segs.shape[0] - self.segs.shape[1]), (0, 0)))
        if track.noise.size > self.hgrid.shape[1]:
            self.hgrid = np.pad(self.hgrid, ((0, 0), (0, track.noise.size - self.hgrid.shape[1])))
        self.segs[k, :segs.shape[0]] = segs
        self.nseg[k] = segs.shape[0]
        self.hgrid[k, :track.noise.size] = track.noise
        self.ngrid[k] = track.noise.size
        self.tracks[k] = track

    def _reset_instance(self, k):
        rng = self.rngs[k]
        ti = self._pick_task(rng)
        task = self.tasks[ti]
        spec = self.fixed_terrain if self.fixed_terrain is not None else task.track.sample(rng)
        self._install_track(k, generate_track(spec, rng, self.dyn.grid_res))
        st, latency = sample_initial_state(task, self.dyn, self.ranges, rng)
        self.state[k] = st.to_vector()
        self.task_idx[k] = ti
        self.delays[k] = latency_steps(latency, self.dyn.dt)
        self.buffer.fill(k, proprio_truth(self.state[k:k + 1])[0])
        self.ep_return[k] = 0.0
        self.ep_length[k] = 0

    def _observe(self, rows=None):
        draws = np.stack([self.rngs[k].standard_normal(P_DIM) for k in range(self.n)])
        return observe(self.state, self.buffer, self.delays, draws, self.amps)

    # -- public API ----------------------------------------------------
    def reset(self) -> ObservationBundle:
        for k in range(self.n):
            self._reset_instance(k)
        self.last_obs = self._observe()
        return self.last_obs

    def task_names(self) -> list[str]:
        return [self.tasks[i].name for i in self.task_idx]

    def set_command(self, k: int, v_cmd: float | None = None, gait: int | None = None):
        if v_cmd is not None:
            self.state[k, LY.VCMD] = v_cmd
        if gait is not None:
            if gait not in (0, 1):
                raise ArgumentError("gait must be 0 or 1")
            self.state[k, LY.G] = float(gait)

    _ARRAYS = ("state", "segs", "nseg", "hgrid", "ngrid", "delays", "task_idx", "ep_return", "ep_length")

    def get_state(self) -> tuple[dict, dict]:
        """Snapshot for exact resume: (float64 arrays, JSON-able metadata)."""
        arrays = {k: np.asarray(getattr(self, k), dtype=np.float64).copy() for k in self._ARRAYS}
        arrays["delay_buf"] = self.buffer.buf.copy()
        arrays["delay_head"] = self.buffer.head.astype(np.float64)
        if self.last_obs is not None:
            for ch in ("p", "e", "i", "c"):
                arrays[f"obs_{ch}"] = getattr(self.last_obs, ch).copy()
        meta = {"rng": [r.bit_generator.state for r in self.rngs]}
        return arrays, meta

    def set_state(self, arrays: dict, meta: dict):
        ints = {"nseg", "ngrid", "delays", "task_idx", "ep_length"}
        for k in self._ARRAYS:
            a = np.array(arrays[k])
            setattr(self, k, a.astype(np.int64) if k in ints else a.astype(np.float64))
        self.buffer.buf = np.array(arrays["delay_buf"], dtype=np.float64)
        self.buffer.head = np.array(arrays["delay_head"]).astype(np.int64)
        if "obs_p" in arrays:
            self.last_obs = ObservationBundle(*(np.array(arrays[f"obs_{ch}"]) for ch in ("p", "e", "i", "c")))
        for r, st in zip(self.rngs, meta["rng"]):
            r.bit_generator.state = st

    def states(self) -> list[EnvState]:
        return [EnvState.from_vector(r) for r in self.state]

    def step(self, actions):
        actions = np.asarray(actions, dtype=np.float64).reshape(self.n, LY.ACTION_DIM)
        if not np.all(np.isfinite(actions)):
            raise ArgumentError("actions must be finite")
        noise = np.array([self.rngs[k].standard_normal() for k in range(self.n)]) * self.dyn.theta_noise
        ns, terms, rew, term, timeout = _kernels.step_batch(
            self.state, actions, noise, self.segs, self.nseg, self.hgrid, self.ngrid, self.params,
            backend=self.backend)
        was_done = self.state[:, LY.DONE] > 0.5
        self.state = ns
        live = ~was_done
        self.ep_return[live] += rew[live]
        self.ep_length[live] += 1
        for k in range(self.n):
            if live[k]:
                self.buffer.push(k, proprio_truth(ns[k:k + 1])[0])
        done = term | timeout
        info = {
            "terms": terms,
            "timeout": timeout & live,
            "terminated": term & live,
            "x": ns[:, LY.X].copy(),
            "task": self.task_names(),
            "episodes": [],
        }
        newly = done & live
        for k in np.flatnonzero(newly):
            info["episodes"].append({
                "instance": int(k), "task": self.tasks[self.task_idx[k]].name,
                "return": float(self.ep_return[k]), "length": int(self.ep_length[k]),
                "x": float(ns[k, LY.X]), "timeout": bool(timeout[k]),
            })
        if self.auto_reset:
            for k in np.flatnonzero(newly):
                self._reset_instance(k)
        self.last_obs = self._observe()
        return self.last_obs, rew, newly if self.auto_reset else done, info


class LocoEnv:
    """Single-instance convenience wrapper (a one-element :class:`VectorEnv`)."""

    def __init__(self, config: EnvConfig, seed=0, auto_reset=False, terrain: TerrainSpec | None = None,
                 backend=None):
        self.vec = VectorEnv(config, seeds=[seed], auto_reset=auto_reset, terrain=terrain, backend=backend)

    def reset(self) -> ObservationBundle:
        return self.vec.reset().row(0)

    def step(self, action):
        obs, rew, done, info = self.vec.step(np.asarray(action, dtype=np.float64)[None])
        info = dict(info)
        info["terms"] = _terms_dict(info["terms"][0].tolist())
        info["timeout"] = bool(info["timeout"][0])
        info["terminated"] = bool(info["terminated"][0])
        return obs.row(0), float(rew[0]), bool(done[0]), info

    @property
    def state(self) -> EnvState:
        return EnvState.from_vector(self.vec.state[0])

    @property
    def track(self) -> RealizedTrack:
        return self.vec.tracks[0]

    def set_command(self, v_cmd=None, gait=None):
        self.vec.set_command(0, v_cmd, gait)


class TrajectoryRecorder:
    """Line-delimited JSON dump of (step, state fields, action, reward terms)."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._step = 0

    def record(self, state: EnvState, action, terms: dict, reward: float, **extra):
        rec = {"step": self._step, "state": state.record(), "action": np.asarray(action).tolist(),
               "reward": reward, "terms": terms}
        rec.update(extra)
        self._fh.write(json.dumps(rec) + "\n")
        self._step += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def vector_env(n: int, config: EnvConfig, seeds=None, **kw) -> VectorEnv:
    return VectorEnv(config, n=n, seeds=seeds, **kw)


__all__ = [
    "C_DIM", "DelayBuffer", "E_DIM", "I_DIM", "LocoEnv", "P_DIM", "TrajectoryRecorder", "VectorEnv",
    "check_termination", "latency_steps", "make_rng", "observe", "reset", "reward_bipedal",
    "reward_quadruped", "sample_initial_state", "step_state", "vector_env",
]
