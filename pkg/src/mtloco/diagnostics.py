"""Gradient-conflict metrics between tasks and expert-usage analytics."""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envsuite.config import EnvConfig
from .errors import ArgumentError, ConfigurationError
from .netcore import tensor as T
from .trainer.config import TrainConfig
from .trainer.loop import Trainer, evaluate_policy
from .trainer.policy import PolicyGraph
from .trainer.ppo import RolloutBuffer, compute_gae, minibatch_losses, normalize

ZERO_CONVENTION = "coordinates where either gradient is exactly zero are excluded"


@dataclass
class TaskGradient:
    task: str
    vector: np.ndarray
    samples: int
    names: list = field(default_factory=list)


def cosine_similarity(g1, g2) -> float:
    g1, g2 = np.asarray(g1, dtype=np.float64), np.asarray(g2, dtype=np.float64)
    if g1.shape != g2.shape:
        raise ArgumentError("gradient lengths differ")
    if not np.any(g1) or not np.any(g2):
        raise ArgumentError("cosine similarity of a zero vector is undefined")
    g1, g2 = _pow2_scale(g1), _pow2_scale(g2)
    s1, s2 = float(np.dot(g1, g1)), float(np.dot(g2, g2))
    # one square root of the product keeps cos(g, g) exactly 1 (sqrt(fl(x*x)) == x)
    return float(np.clip(np.dot(g1, g2) / np.sqrt(s1 * s2), -1.0, 1.0))


def _pow2_scale(g):
    """Exact rescale by a power of two so the largest entry lies in [0.5, 1)."""
    return np.ldexp(g, -int(np.frexp(np.max(np.abs(g)))[1]))


def negative_entry_ratio(g1, g2) -> float:
    """Share of opposite-sign coordinates among those where both gradients are nonzero."""
    g1, g2 = np.asarray(g1, dtype=np.float64), np.asarray(g2, dtype=np.float64)
    if g1.shape != g2.shape:
        raise ArgumentError("gradient lengths differ")
    both = (g1 != 0.0) & (g2 != 0.0)
    n = int(np.count_nonzero(both))
    if n == 0:
        return 0.0
    return float(np.count_nonzero((g1 * g2 < 0.0) & both)) / n


def gradient_names(policy: PolicyGraph, actor_only: bool = False) -> list[str]:
    names = policy.store.names(trainable_only=True)
    if actor_only:
        names = [n for n in names if not n.startswith(("critic.", "est."))]
    return names


def collect_task_batches(policy: PolicyGraph, env_cfg: EnvConfig, cfg: TrainConfig, n_batches: int,
                         seed: int = 0, privileged: bool = True, warmup: int = 0) -> list[RolloutBuffer]:
    """Roll the fixed policy on one env config and return ``n_batches`` consecutive windows.

    The first ``warmup`` windows are discarded so that robots have left the
    flat lead-in shared by every track.
    """
    tr = Trainer(policy, env_cfg, cfg, seed, "1" if privileged else "2")
    for _ in range(warmup):
        tr.collect(1.0 if privileged else 0.0)
    out = []
    for _ in range(n_batches):
        buf, _ = tr.collect(1.0 if privileged else 0.0)
        compute_gae(buf, cfg.gamma, cfg.lam)
        out.append(buf)
    return out


def batch_gradient(policy: PolicyGraph, buf: RolloutBuffer, cfg: TrainConfig, names, surrogate_only=False):
    """Flat gradient of the total loss (or the surrogate alone) on one whole window."""
    policy.store.zero_grad()
    envs = np.arange(buf.n_envs)
    terms, _, _ = minibatch_losses(policy, buf, envs, normalize(buf.advantages), cfg)
    T.backward(terms["surro"] if surrogate_only else terms["total"])
    grads = policy.store.grads()
    policy.store.zero_grad()
    return grads.flat(names)


def task_gradient(policy: PolicyGraph, batches, n_epochs: int, cfg: TrainConfig, actor_only: bool = False,
                  surrogate_only: bool = False) -> TaskGradient:
    """Element-wise mean over ``n_epochs`` of per-batch gradients (batches reused cyclically).

    The policy is not updated between epochs.
    """
    if not batches:
        raise ArgumentError("no batches")
    if n_epochs < 1:
        raise ArgumentError("n_epochs must be >= 1")
    tasks = set()
    for b in batches:
        tasks |= set(b.tasks or ["?"])
    if len(tasks) != 1:
        raise ArgumentError(f"batches mix tasks: {sorted(tasks)}")
    names = gradient_names(policy, actor_only)
    mean = None
    for k in range(n_epochs):
        g = batch_gradient(policy, batches[k % len(batches)], cfg, names, surrogate_only)
        mean = g.copy() if mean is None else mean + (g - mean) / (k + 1)
    return TaskGradient(tasks.pop(), mean, n_epochs, names)


@dataclass
class ConflictReport:
    tasks: list
    cosine: np.ndarray
    negative: np.ndarray
    epochs: int
    convention: str = ZERO_CONVENTION

    @classmethod
    def from_gradients(cls, grads: list[TaskGradient], epochs: int):
        n = len(grads)
        cos = np.eye(n)
        neg = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                cos[a, b] = cos[b, a] = cosine_similarity(grads[a].vector, grads[b].vector)
                neg[a, b] = neg[b, a] = negative_entry_ratio(grads[a].vector, grads[b].vector)
        return cls([g.task for g in grads], cos, neg, epochs)

    def mean_offdiag(self):
        n = len(self.tasks)
        iu = np.triu_indices(n, 1)
        return float(np.mean(self.cosine[iu])), float(np.mean(self.negative[iu]))

    def to_table(self, sep: str = "\t") -> str:
        """Two task-by-task blocks (cosine, then negative ratio) with full-precision values."""
        buf = io.StringIO()
        buf.write(f"# epochs{sep}{self.epochs}\n# zero_convention{sep}{self.convention}\n")
        for title, mat in (("cosine", self.cosine), ("negative_ratio", self.negative)):
            buf.write(sep.join([title, *self.tasks]) + "\n")
            for t, row in zip(self.tasks, mat):
                buf.write(sep.join([t, *(repr(float(x)) for x in row)]) + "\n")
        return buf.getvalue()

    @classmethod
    def from_table(cls, text: str, sep: str = "\t"):
        lines = [ln for ln in text.splitlines() if ln]
        meta = {}
        while lines and lines[0].startswith("#"):
            k, v = lines.pop(0)[2:].split(sep, 1)
            meta[k] = v
        blocks = {}
        while lines:
            head = lines.pop(0).split(sep)
            tasks = head[1:]
            rows = [lines.pop(0).split(sep) for _ in tasks]
            blocks[head[0]] = (tasks, np.array([[float(x) for x in r[1:]] for r in rows]))
        tasks = blocks["cosine"][0]
        return cls(tasks, blocks["cosine"][1], blocks["negative_ratio"][1], int(meta.get("epochs", 0)),
                   meta.get("zero_convention", ZERO_CONVENTION))


def conflict_report(policy: PolicyGraph, tasks, cfg: TrainConfig, env_cfg: EnvConfig | None = None,
                    n_epochs: int = 100, n_batches: int | None = None, seed: int = 0, actor_only: bool = False,
                    surrogate_only: bool = False, warmup: int = 8) -> ConflictReport:
    """Per-task averaged gradients from task-pinned rollouts of a frozen policy, then all pairs."""
    tasks = list(tasks)
    if len(tasks) < 2:
        raise ArgumentError("need at least two tasks")
    base = env_cfg or EnvConfig()
    reg = base.registry()
    for t in tasks:
        if t not in reg:
            raise ArgumentError(f"unknown task {t!r}")
    snapshot = policy.store.flatten()
    grads = []
    for t in tasks:
        batches = collect_task_batches(policy, base.with_tasks([t]), cfg, n_batches or n_epochs, seed,
                                       warmup=warmup)
        grads.append(task_gradient(policy, batches, n_epochs, cfg, actor_only, surrogate_only))
    if not np.array_equal(policy.store.flatten(), snapshot):
        raise ConfigurationError("policy changed during gradient probing")
    return ConflictReport.from_gradients(grads, n_epochs)


# ---------------------------------------------------------------- expert usage

def expert_usage(rollouts: dict) -> dict:
    """Per-task element-wise mean of gating vectors.  ``rollouts`` maps task -> array-likes of shape (n, N)."""
    out = {}
    for task, samples in rollouts.items():
        arr = _stack_samples(samples)
        if arr.size == 0:
            raise ArgumentError(f"empty rollout for task {task!r}")
        out[task] = arr.mean(axis=0)
    if not out:
        raise ArgumentError("no rollouts")
    return out


def _stack_samples(samples):
    if isinstance(samples, np.ndarray):
        return samples.reshape(-1, samples.shape[-1]) if samples.size else samples
    parts = [np.asarray(s).reshape(-1, np.shape(s)[-1]) for s in samples if np.size(s)]
    return np.concatenate(parts) if parts else np.zeros((0, 0))


def gate_rollouts(policy: PolicyGraph, env_cfg: EnvConfig, tasks, seeds, max_steps: int | None = None,
                  privileged: bool = True, override=None) -> dict:
    """Deterministic episodes pinned to each task; returns task -> list of per-episode gate arrays."""
    out = {}
    for t in tasks:
        res = evaluate_policy(policy, env_cfg.with_tasks([t]), seeds, privileged, max_steps, override,
                              record_gates=True)
        out[t] = [g for g in res.gates if len(g)]
    return out


def usage_l1(usage: dict, a: str, b: str) -> float:
    return float(np.sum(np.abs(usage[a] - usage[b])))


def export_gating_samples(rollouts: dict, path) -> int:
    """Write one JSON line per step: task, step index, gating weights.  Returns the record count."""
    if not rollouts or all(_stack_samples(s).size == 0 for s in rollouts.values()):
        raise ArgumentError("no gating samples to export")
    path = Path(path)
    count = 0
    with open(path, "w") as fh:
        for task, samples in rollouts.items():
            episodes = [samples] if isinstance(samples, np.ndarray) else samples
            for ep, arr in enumerate(episodes):
                for step, g in enumerate(np.asarray(arr).reshape(-1, np.shape(arr)[-1])):
                    fh.write(json.dumps({"task": task, "episode": ep, "step": step,
                                         "weights": [float(x) for x in g]}) + "\n")
                    count += 1
    return count


def load_gating_samples(path) -> dict:
    out: dict = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            out.setdefault(rec["task"], []).append(rec["weights"])
    return {k: np.array(v) for k, v in out.items()}


__all__ = [
    "ConflictReport", "TaskGradient", "ZERO_CONVENTION", "batch_gradient", "collect_task_batches",
    "conflict_report", "cosine_similarity", "export_gating_samples", "expert_usage", "gate_rollouts",
    "gradient_names", "load_gating_samples", "negative_entry_ratio", "task_gradient", "usage_l1",
]
