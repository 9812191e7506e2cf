"""Run configuration: one YAML document, fully materialised with defaults on load."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import __version__
from .envsuite.config import EnvConfig
from .errors import ConfigurationError
from .trainer.config import NetworkConfig, TrainConfig, config_from_dict


@dataclass
class EvalSection:
    """Which episodes the compose/usage commands roll out."""

    tasks: list = field(default_factory=lambda: ["flat_q"])
    n_seeds: int = 4
    seed_offset: int = 10_000
    max_steps: int | None = 500
    privileged: bool = False

    def seeds(self, seed):
        return [[seed, self.seed_offset + k] for k in range(self.n_seeds)]


@dataclass
class BenchSection:
    kind: str = "flat"             # flat | bar | pit | baffle | stair | slope | mixed
    param: float = 0.0
    count: int = 5
    length: float = 30.0
    target: float | None = None    # defaults to the track end
    time_limit: float = 40.0
    trials: int = 5
    v_cmd: float = 0.75
    gait: int = 0
    privileged: bool = False


@dataclass
class GradSection:
    tasks: list = field(default_factory=lambda: ["bar_q", "baffle_q"])
    epochs: int = 100
    warmup: int = 8                # rollout windows discarded before gradients are taken
    actor_only: bool = False
    surrogate_only: bool = False


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    out: str = "runs/run"
    stage: str = "1"                   # 1 | 2 | adapt
    source_checkpoint: str | None = None
    checkpoint: str | None = None      # policy for eval / gradconflict / compose / usage
    override: str | None = None        # gating override file for compose
    k_new: int = 1
    env_path: str | None = None
    train_path: str | None = None
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    evaluation: EvalSection = field(default_factory=EvalSection)
    benchmark: BenchSection = field(default_factory=BenchSection)
    gradconflict: GradSection = field(default_factory=GradSection)

    def resolved(self) -> dict:
        d = asdict(self)
        d["env"] = self.env.to_dict()
        d["version"] = __version__
        return json.loads(json.dumps(d))


_SECTIONS = {"train": TrainConfig, "network": NetworkConfig, "evaluation": EvalSection,
             "benchmark": BenchSection, "gradconflict": GradSection}


def _key_lines(node, prefix=()):
    """Map key paths to 1-based source lines from a composed YAML node."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = (*prefix, k.value)
            out[path] = k.start_mark.line + 1
            out.update(_key_lines(v, path))
    return out


class _Located:
    def __init__(self, path, lines):
        self.path, self.lines = str(path), lines

    def error(self, keypath, msg):
        line = None
        kp = tuple(keypath)
        while kp and line is None:
            line = self.lines.get(kp)
            kp = kp[:-1]
        where = f"{self.path}:{line}" if line else self.path
        return ConfigurationError(f"{where}: {msg}")


def _read_yaml(path):
    text = Path(path).read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigurationError(f"{path}{line}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}:1: top level must be a mapping")
    return data, _Located(path, _key_lines(node))


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Parse ``path`` (or defaults when None), resolve referenced env/train files, validate everything."""
    data, loc = ({}, _Located("<defaults>", {})) if path is None else _read_yaml(path)
    data = dict(data)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    base = Path(path).parent if path else Path(".")
    known = {f.name for f in fields(RunConfig)}
    for k in data:
        if k not in known:
            raise loc.error([k], f"unknown key {k!r}")
    kw = {k: v for k, v in data.items() if k not in _SECTIONS and k != "env"}

    env_d = {}
    if data.get("env_path"):
        p = _resolve(base, data["env_path"], loc, "env_path")
        env_d.update(_read_yaml(p)[0])
        kw["env_path"] = str(p)
    env_d.update(data.get("env") or {})
    try:
        kw["env"] = EnvConfig.from_dict(env_d)
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise loc.error(["env"], f"env: {exc}") from None

    train_d = {}
    if data.get("train_path"):
        p = _resolve(base, data["train_path"], loc, "train_path")
        train_d.update(_read_yaml(p)[0])
        kw["train_path"] = str(p)
    train_d.update(data.get("train") or {})
    sections = dict(data, train=train_d)
    for name, cls in _SECTIONS.items():
        sec = sections.get(name) or {}
        if not isinstance(sec, dict):
            raise loc.error([name], f"{name} must be a mapping")
        for k in sec:
            if k not in {f.name for f in fields(cls)}:
                raise loc.error([name, k], f"unknown key {name}.{k}")
        try:
            kw[name] = config_from_dict(cls, sec, name)
        except (ConfigurationError, ValueError) as exc:
            raise loc.error([name], str(exc)) from None
    try:
        cfg = RunConfig(**kw)
    except TypeError as exc:
        raise loc.error([], str(exc)) from None
    if cfg.stage not in ("1", "2", "adapt"):
        raise loc.error(["stage"], f"stage must be 1, 2 or adapt, got {cfg.stage!r}")
    for key in ("source_checkpoint", "checkpoint", "override"):
        v = getattr(cfg, key)
        if v is not None:
            setattr(cfg, key, str(_resolve(base, v, loc, key, must_exist=False)))
    return cfg


def _resolve(base, p, loc, key, must_exist=True):
    p = Path(os.path.expanduser(str(p)))
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise loc.error([key], f"{key} {str(p)!r} does not exist")
    return p


def dump_resolved(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.resolved(), sort_keys=True)


def worker_count() -> int:
    """Worker count from ``MTLOCO_WORKERS`` (default 1).  Results never depend on it."""
    raw = os.environ.get("MTLOCO_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"MTLOCO_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError("MTLOCO_WORKERS must be >= 1")
    return n


__all__ = ["BenchSection", "EvalSection", "GradSection", "RunConfig", "dump_resolved", "load_run_config",
           "worker_count"]
