"""Environment configuration: dynamics constants, randomization ranges, tracks and tasks."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .._kernels.layout import KIND_CODES, PARAM_NAMES
from ..errors import ConfigurationError

DT = 0.02  # 50 Hz control


@dataclass
class DynamicsConfig:
    """Constants of the abstract locomotion dynamics and the reward weights."""

    dt: float = DT
    kappa_limb: float = 10.0      # first-order limb lag (stands in for joint PD)
    kappa_z: float = 5.0
    kappa_v: float = 4.0
    drive_gain: float = 0.5
    lift_max: float = 0.25        # limb extension 1.0 lifts the foot this high (m)
    z_nominal: float = 0.30
    z_range: float = 0.25
    z_lo: float = 0.05
    z_hi: float = 0.55
    kp_quad: float = 1.0          # balance instability, quadrupedal
    kp_bip: float = 2.0           # balance instability, bipedal
    k_u: float = 1.5
    k_asym: float = 0.3
    contact_load: float = 1.0
    k_contact: float = 20.0
    pit_k: float = 10.0           # amplitude needed to clear a pit = pit_k * width
    stand_progress: float = 0.40
    upright_cos: float = 0.8
    stride: float = 0.1
    theta_quad: float = 1.0
    theta_bip: float = 1.6
    z_floor: float = 0.12
    stand_min: float = 0.25
    grace: float = 1.0
    max_episode_s: float = 20.0
    sigma: float = 0.25
    t_min: float = 0.30
    t_max: float = 0.50
    s_low: float = 0.30
    s_high: float = 0.50
    z_target_quad: float = 0.30
    cos_gate: float = 0.95
    w_track_q: float = 7.0
    w_track_b: float = 3.0
    w_alive: float = 1.0
    w_term: float = -1.0
    w_action: float = -0.05
    w_action_rate: float = -0.03
    w_limb_vel_q: float = -0.002
    w_limb_acc_q: float = -2e-6
    w_limb_vel_b: float = -2e-3
    w_limb_acc_b: float = -3e-6
    w_ang_vel: float = -0.2
    w_height_q: float = -0.1
    w_orient: float = 1.0
    w_stand: float = 0.8
    w_suppress: float = -2.0
    grid_res: float = 0.05
    theta_noise: float = 0.5      # process noise std on the balance rate (rad/s)

    def params_array(self) -> np.ndarray:
        d = asdict(self)
        d["max_episode_steps"] = float(round(self.max_episode_s / self.dt))
        return np.array([float(d[n]) for n in PARAM_NAMES])

    @property
    def max_episode_steps(self) -> int:
        return int(round(self.max_episode_s / self.dt))


@dataclass
class NoiseAmplitudes:
    """Gaussian noise std per proprioceptive channel."""

    theta: float = 0.05        # projected-gravity analog
    theta_rate: float = 0.2    # angular velocity
    limb: float = 0.01         # joint position
    limb_vel: float = 1.5      # joint velocity
    z: float = 0.01
    action: float = 0.0

    def vector(self) -> np.ndarray:
        return np.array([self.theta, self.theta_rate] + [self.limb] * 4 + [self.limb_vel] * 4
                        + [self.z] + [self.action] * 6)


@dataclass
class RandomizationRanges:
    friction: tuple = (0.5, 1.25)
    velocity_gain: tuple = (0.9, 1.1)     # mass analog
    init_scale: tuple = (0.5, 1.5)        # multiplies nominal limb / posture at reset
    init_theta: tuple = (-0.05, 0.05)
    motor_strength: tuple = (0.9, 1.1)
    latency: tuple = (0.005, 0.045)
    noise: NoiseAmplitudes = field(default_factory=NoiseAmplitudes)

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseAmplitudes(**self.noise)
        for f in fields(self):
            if f.name == "noise":
                continue
            lo, hi = getattr(self, f.name)
            if not lo <= hi:
                raise ConfigurationError(f"randomization range {f.name} has lo > hi")
            setattr(self, f.name, (float(lo), float(hi)))
        if self.latency[0] < 0:
            raise ConfigurationError("latency must be non-negative")

    @classmethod
    def degenerate(cls):
        """No randomization, no noise: every reset lands on the nominal state."""
        return cls(friction=(1.0, 1.0), velocity_gain=(1.0, 1.0), init_scale=(1.0, 1.0),
                   init_theta=(0.0, 0.0), motor_strength=(1.0, 1.0), latency=(0.0, 0.0),
                   noise=NoiseAmplitudes(0.0, 0.0, 0.0, 0.0, 0.0, 0.0))


# obstacle parameter ranges (height / width / gap in m, slope angle in rad)
PARAM_RANGES = {
    "bar": (0.05, 0.20),
    "pit": (0.05, 0.20),
    "baffle": (0.22, 0.30),
    "stair": (0.05, 0.15),
    "slope": (math.radians(10.0), math.radians(35.0)),
}


@dataclass
class Segment:
    kind: str
    length: float
    param: float = 0.0
    direction: int = 1   # +1 up, -1 down (stairs and slopes)

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ConfigurationError(f"unknown segment kind {self.kind!r}")
        if self.length <= 0:
            raise ConfigurationError("segment length must be positive")
        if self.kind in PARAM_RANGES:
            lo, hi = PARAM_RANGES[self.kind]
            if not lo - 1e-12 <= self.param <= hi + 1e-12:
                raise ConfigurationError(f"{self.kind} parameter {self.param} outside [{lo}, {hi}]")
        if self.direction not in (1, -1):
            raise ConfigurationError("segment direction must be +1 or -1")


@dataclass
class TerrainSpec:
    segments: list
    track_length: float
    z_max: float = 0.0

    def __post_init__(self):
        self.segments = [s if isinstance(s, Segment) else Segment(**s) for s in self.segments]
        if self.z_max < 0:
            raise ConfigurationError("fractal noise scale must be non-negative")
        if not self.segments:
            raise ConfigurationError("terrain needs at least one segment")
        total = sum(s.length for s in self.segments)
        if abs(total - self.track_length) > 1e-6:
            raise ConfigurationError(f"segments cover {total} m but track_length is {self.track_length} m")

    def starts(self) -> list[float]:
        out, x = [], 0.0
        for s in self.segments:
            out.append(x)
            x += s.length
        return out

    @classmethod
    def flat(cls, length=30.0, z_max=0.0):
        return cls([Segment("flat", length)], length, z_max)


OBSTACLE_LENGTH = {"bar": 0.2, "baffle": 0.6, "stair": 1.5, "slope": 3.0}


@dataclass
class TrackTemplate:
    """Recipe for drawing a TerrainSpec: ``count`` obstacles spread evenly after a flat lead-in."""

    kind: str = "flat"
    count: int = 5
    track_length: float = 30.0
    lead: float = 2.0
    z_max: float = 0.1
    param_range: tuple | None = None
    direction: int = 0   # 0: random per obstacle

    def sample(self, rng) -> TerrainSpec:
        if self.kind == "flat" or self.count == 0:
            return TerrainSpec.flat(self.track_length, self.z_max)
        lo, hi = self.param_range or PARAM_RANGES[self.kind]
        span = self.track_length - self.lead
        pitch = span / self.count
        segs = [Segment("flat", self.lead)]
        for _ in range(self.count):
            par = float(rng.uniform(lo, hi))
            d = self.direction if self.direction else (1 if rng.random() < 0.5 else -1)
            width = par if self.kind == "pit" else OBSTACLE_LENGTH[self.kind]
            width = min(width, pitch * 0.5)
            segs.append(Segment(self.kind, width, par, d))
            segs.append(Segment("flat", pitch - width))
        return TerrainSpec(segs, self.track_length, self.z_max)


@dataclass
class TaskSpec:
    name: str
    gait: int
    track: TrackTemplate
    v_cmd: tuple = (0.5, 1.0)
    suppress_limb: int = -1

    def __post_init__(self):
        if isinstance(self.track, dict):
            self.track = TrackTemplate(**self.track)
        if self.gait not in (0, 1):
            raise ConfigurationError("gait must be 0 (quadrupedal) or 1 (bipedal)")
        self.v_cmd = (float(self.v_cmd[0]), float(self.v_cmd[1]))


def builtin_tasks() -> dict[str, TaskSpec]:
    return {
        "flat_q": TaskSpec("flat_q", 0, TrackTemplate("flat")),
        "bar_q": TaskSpec("bar_q", 0, TrackTemplate("bar")),
        "pit_q": TaskSpec("pit_q", 0, TrackTemplate("pit")),
        "baffle_q": TaskSpec("baffle_q", 0, TrackTemplate("baffle")),
        "stair_q": TaskSpec("stair_q", 0, TrackTemplate("stair", count=3)),
        "slope_q": TaskSpec("slope_q", 0, TrackTemplate("slope", count=3)),
        "flat_b": TaskSpec("flat_b", 1, TrackTemplate("flat"), v_cmd=(0.3, 0.6)),
        "slope_b": TaskSpec("slope_b", 1, TrackTemplate("slope", count=3), v_cmd=(0.3, 0.6)),
        "stair_b": TaskSpec("stair_b", 1, TrackTemplate("stair", count=3, direction=-1), v_cmd=(0.3, 0.6)),
        "flat_q3": TaskSpec("flat_q3", 0, TrackTemplate("flat"), suppress_limb=0),
    }


@dataclass
class EnvConfig:
    tasks: list = field(default_factory=lambda: ["flat_q"])
    task_weights: list | None = None
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    randomization: RandomizationRanges = field(default_factory=RandomizationRanges)
    custom_tasks: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.dynamics, dict):
            self.dynamics = DynamicsConfig(**self.dynamics)
        if isinstance(self.randomization, dict):
            self.randomization = RandomizationRanges(**self.randomization)
        self.custom_tasks = {k: v if isinstance(v, TaskSpec) else TaskSpec(name=k, **v)
                             for k, v in (self.custom_tasks or {}).items()}
        if not self.tasks:
            raise ConfigurationError("at least one task required")
        reg = self.registry()
        for t in self.tasks:
            if t not in reg:
                raise ConfigurationError(f"unknown task {t!r}")
        if self.task_weights is None:
            self.task_weights = [1.0] * len(self.tasks)
        if len(self.task_weights) != len(self.tasks) or min(self.task_weights) < 0 or sum(self.task_weights) <= 0:
            raise ConfigurationError("task_weights must be non-negative, one per task")

    def registry(self) -> dict[str, TaskSpec]:
        reg = builtin_tasks()
        reg.update(self.custom_tasks)
        return reg

    def task_specs(self) -> list[TaskSpec]:
        reg = self.registry()
        return [reg[t] for t in self.tasks]

    def with_tasks(self, tasks, weights=None) -> "EnvConfig":
        return EnvConfig(list(tasks), weights, self.dynamics, self.randomization, dict(self.custom_tasks))

    def to_dict(self):
        d = asdict(self)
        d["custom_tasks"] = {k: {kk: vv for kk, vv in asdict(v).items() if kk != "name"}
                             for k, v in self.custom_tasks.items()}
        return _tuples_to_lists(d)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown env config keys: {sorted(unknown)}")
        return cls(**d)


def _tuples_to_lists(obj):
    if isinstance(obj, dict):
        return {k: _tuples_to_lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_tuples_to_lists(v) for v in obj]
    return obj


def _load_yaml(path):
    import yaml

    with open(path) as fh:
        try:
            return yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None


def load_terrain(path) -> TerrainSpec:
    d = _load_yaml(path)
    try:
        return TerrainSpec(**d)
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def load_randomization(path) -> RandomizationRanges:
    d = _load_yaml(path)
    try:
        return RandomizationRanges(**d)
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
