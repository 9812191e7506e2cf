"""Track benchmark: success rate, pass time and travel distance per policy and track."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._kernels import layout as LY
from .envsuite.config import EnvConfig, RandomizationRanges, Segment, TaskSpec, TerrainSpec, TrackTemplate
from .envsuite.env import VectorEnv
from .errors import ArgumentError, ConfigurationError
from .netcore import tensor as T
from .trainer.policy import PolicyGraph

CAUSES = ("none", "fell", "stuck", "terminated", "timeout")


@dataclass
class BenchmarkSpec:
    track: TerrainSpec
    target: float
    time_limit: float = 40.0
    trials: int = 5
    gait_schedule: list = field(default_factory=lambda: [[0.0, 0]])  # [x_from, gait] pairs, ascending
    v_cmd: float = 0.75
    success_radius: float = 1.0
    stuck_window: float = 5.0
    stuck_distance: float = 0.05
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges)
    name: str = "track"

    def __post_init__(self):
        if isinstance(self.track, dict):
            self.track = TerrainSpec(**self.track)
        if isinstance(self.randomization, dict):
            self.randomization = RandomizationRanges(**self.randomization)
        if self.target > self.track.track_length:
            raise ConfigurationError("target lies beyond the end of the track")
        if self.time_limit <= 0:
            raise ConfigurationError("time limit must be positive")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        self.gait_schedule = sorted([float(x), int(g)] for x, g in self.gait_schedule)
        if not self.gait_schedule or self.gait_schedule[0][0] > 0.0:
            raise ConfigurationError("gait schedule must start at x <= 0")

    def gait_at(self, x: float) -> int:
        g = self.gait_schedule[0][1]
        for x0, gg in self.gait_schedule:
            if x >= x0:
                g = gg
        return g


@dataclass
class TrialResult:
    success: bool
    pass_time: float
    distance: float
    cause: str
    seed: object = None

    def __post_init__(self):
        if self.cause not in CAUSES:
            raise ArgumentError(f"unknown failure cause {self.cause!r}")


def score_trajectory(xs, dt: float, spec: BenchmarkSpec, terminated_at: int | None = None,
                     fell: bool = False, seed=None) -> TrialResult:
    """Apply the benchmark accounting to positions ``xs[k]`` after step ``k+1``.

    Success is the first step with ``|x - target| <= radius``; failures get
    ``pass_time = time_limit``.  Stuck means less than ``stuck_distance`` of
    progress over any ``stuck_window``.  Distance is the final position,
    clipped to the track.
    """
    xs = np.asarray(xs, dtype=np.float64)
    limit_steps = int(round(spec.time_limit / dt))
    window = int(round(spec.stuck_window / dt))
    n = min(len(xs), limit_steps)
    end = n
    cause = "timeout"
    for k in range(n):
        if abs(xs[k] - spec.target) <= spec.success_radius:
            return TrialResult(True, (k + 1) * dt, _clip_x(xs[k], spec), "none", seed)
        if terminated_at is not None and k >= terminated_at:
            end, cause = k + 1, "fell" if fell else "terminated"
            break
        if k >= window and xs[k] - xs[k - window] < spec.stuck_distance:
            end, cause = k + 1, "stuck"
            break
    final = xs[end - 1] if end > 0 else 0.0
    return TrialResult(False, spec.time_limit, _clip_x(final, spec), cause, seed)


def _clip_x(x, spec):
    return float(min(max(x, 0.0), spec.track.track_length))


class PolicyController:
    """Deterministic (mean-action) driver for a trained policy."""

    def __init__(self, policy: PolicyGraph, privileged: bool = False, override=None):
        self.policy, self.privileged, self.override = policy, privileged, override

    def reset(self, n: int):
        self.state = self.policy.zero_state(n)

    def __call__(self, obs, t: int):
        n = obs.p.shape[0]
        with T.no_grad():
            out, self.state = self.policy.step(obs, self.state, np.full(n, 1.0 if self.privileged else 0.0),
                                               self.override)
        return out["mu"].data


class ScriptedController:
    """Wraps ``fn(obs, t) -> actions`` for hand-written policies."""

    def __init__(self, fn):
        self.fn = fn

    def reset(self, n: int):
        pass

    def __call__(self, obs, t: int):
        return self.fn(obs, t)


def _bench_env_config(spec: BenchmarkSpec, base: EnvConfig | None):
    base = base or EnvConfig()
    dyn = replace(base.dynamics, max_episode_s=spec.time_limit + 1.0)
    task = TaskSpec("bench", spec.gait_at(0.0), TrackTemplate("flat"), (spec.v_cmd, spec.v_cmd))
    return EnvConfig(["bench"], None, dyn, spec.randomization, {"bench": task})


def run_trial(controller, spec: BenchmarkSpec, seed, env_cfg: EnvConfig | None = None) -> TrialResult:
    if not callable(controller):
        raise ArgumentError("controller must be callable")
    if not hasattr(controller, "reset"):
        controller = ScriptedController(controller)
    cfg = _bench_env_config(spec, env_cfg)
    env = VectorEnv(cfg, seeds=[seed], auto_reset=False, terrain=spec.track)
    obs = env.reset()
    controller.reset(1)
    dt = cfg.dynamics.dt
    steps = int(round(spec.time_limit / dt))
    xs = []
    terminated_at, fell = None, False
    for t in range(steps):
        env.set_command(0, v_cmd=spec.v_cmd, gait=spec.gait_at(float(env.state[0, LY.X])))
        obs.c[:] = env.state[:, [LY.VCMD, LY.G]]
        try:
            a = np.asarray(controller(obs, t), dtype=np.float64).reshape(1, 6)
            obs, _, done, info = env.step(a)
        except ArgumentError:
            terminated_at = t
            xs.append(float(env.state[0, LY.X]))
            break
        xs.append(float(env.state[0, LY.X]))
        if info["terminated"][0]:
            terminated_at, fell = t, bool(env.state[0, LY.FELL] > 0.5)
            break
    return score_trajectory(xs, dt, spec, terminated_at, fell, seed)


@dataclass
class BenchmarkResult:
    success_rate: float
    mean_pass_time: float
    mean_distance: float
    trials: list

    def to_dict(self):
        return {"success_rate": self.success_rate, "mean_pass_time": self.mean_pass_time,
                "mean_distance": self.mean_distance, "trials": [asdict(t) for t in self.trials]}


def aggregate(trials: list[TrialResult]) -> BenchmarkResult:
    if not trials:
        raise ArgumentError("no trials to aggregate")
    n = len(trials)
    return BenchmarkResult(
        math.fsum(1.0 for t in trials if t.success) / n,
        math.fsum(t.pass_time for t in trials) / n,
        math.fsum(t.distance for t in trials) / n,
        list(trials),
    )


def run_benchmark(controller, spec: BenchmarkSpec, n_trials: int | None = None, seeds=None,
                  env_cfg: EnvConfig | None = None) -> BenchmarkResult:
    n = spec.trials if n_trials is None else n_trials
    if n < 1:
        raise ArgumentError("n_trials must be >= 1")
    seeds = list(range(n)) if seeds is None else list(seeds)[:n]
    if len(seeds) < n:
        raise ArgumentError("fewer seeds than trials")
    return aggregate([run_trial(controller, spec, s, env_cfg) for s in seeds])


# ---------------------------------------------------------------- standard tracks

def single_task_track(kind: str, param: float, count: int = 5, length: float = 30.0, lead: float = 2.0,
                      direction: int = 1, z_max: float = 0.0) -> TerrainSpec:
    """``count`` identical obstacles spread evenly after a flat lead-in."""
    if kind == "flat":
        return TerrainSpec.flat(length, z_max)
    tmpl = TrackTemplate(kind, count, length, lead, z_max, (param, param), direction)
    return tmpl.sample(np.random.default_rng(0))


def mixed_track(length: float = 40.0) -> tuple[TerrainSpec, list]:
    """Shortened mixed runway: quadrupedal obstacles, then a bipedal stretch.  Returns (spec, gait schedule)."""
    segs = [Segment("flat", 2.0), Segment("bar", 0.2, 0.08), Segment("flat", 5.8),
            Segment("baffle", 0.6, 0.28), Segment("flat", 5.4), Segment("pit", 0.08, 0.08),
            Segment("flat", 5.92), Segment("stair", 1.5, 0.06, 1), Segment("flat", 6.5)]
    used = sum(s.length for s in segs)
    segs.append(Segment("flat", length - used))
    switch = used
    return TerrainSpec(segs, length, 0.0), [[0.0, 0], [switch, 1]]


def results_table(results: dict, metrics=("success_rate", "mean_pass_time", "mean_distance")) -> str:
    """``results[(method, track)] -> BenchmarkResult`` as a CSV: one row per method, metric blocks by track."""
    methods = sorted({m for m, _ in results})
    tracks = sorted({t for _, t in results})
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["method"] + [f"{metric}:{t}" for metric in metrics for t in tracks])
    for m in methods:
        row = [m]
        for metric in metrics:
            for t in tracks:
                r = results.get((m, t))
                row.append("" if r is None else repr(getattr(r, metric)))
        w.writerow(row)
    return out.getvalue()


__all__ = ["BenchmarkResult", "BenchmarkSpec", "CAUSES", "PolicyController", "ScriptedController", "TrialResult",
           "aggregate", "mixed_track", "results_table", "run_benchmark", "run_trial", "score_trajectory",
           "single_task_track"]
