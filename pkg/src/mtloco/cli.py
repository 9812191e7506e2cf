"""``mtloco`` command line: train, eval, gradconflict, compose, usage."""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import conflict_report, export_gating_samples, expert_usage, gate_rollouts
from .errors import ArgumentError, ConfigurationError, MTLocoError
from .evalbench import (BenchmarkSpec, PolicyController, ScriptedController, mixed_track, results_table,
                        run_benchmark, single_task_track)
from .moe import load_override
from .runconfig import RunConfig, dump_resolved, load_run_config, worker_count
from .trainer import (build_policy, evaluate_policy, load_checkpoint, prepare_adaptation, resume_trainer,
                      save_checkpoint)
from .trainer.loop import Trainer
from .envsuite.env import make_rng


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _jsonl(records) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


def _write_config(cfg: RunConfig, out: Path):
    atomic_write_text(out / "config.yaml", dump_resolved(cfg))


def _load_policy(cfg: RunConfig, path=None):
    path = path or cfg.checkpoint
    if not path:
        raise ConfigurationError("no checkpoint given (set 'checkpoint' or pass --checkpoint)")
    if not Path(path).exists():
        raise ConfigurationError(f"checkpoint {path!r} does not exist")
    return load_checkpoint(path)[0]


# ---------------------------------------------------------------- commands

def cmd_train(cfg: RunConfig, out: Path, resume=None):
    metrics = out / "metrics.jsonl"
    partial = out / ".metrics.jsonl.partial"
    out.mkdir(parents=True, exist_ok=True)
    if resume:
        tr = resume_trainer(resume, cfg.env)
        tr.metrics_path = partial
        if metrics.exists():
            partial.write_text(metrics.read_text())
    else:
        if cfg.stage == "1":
            policy = build_policy(cfg.network, cfg.seed)
        else:
            if not cfg.source_checkpoint:
                raise ConfigurationError(f"stage {cfg.stage} needs source_checkpoint")
            base = _load_policy(cfg, cfg.source_checkpoint)
            if cfg.stage == "2":
                policy = base.clone()
            else:
                policy = prepare_adaptation(base, cfg.k_new, cfg.train.adapt_trainable, make_rng([cfg.seed, 1]))
        tr = Trainer(policy, cfg.env, cfg.train, cfg.seed, cfg.stage, partial)
    try:
        tr.run(cfg.train.iterations)
        # the output location is left out so reruns into another directory stay byte-identical
        run_cfg = {k: v for k, v in cfg.resolved().items() if k != "out"}
        save_checkpoint(out / "checkpoint", tr.policy, tr, {"seed": cfg.seed, "stage": cfg.stage, "config": run_cfg})
        if tr.iteration == 0:
            partial.write_text("")
        os.replace(partial, metrics)
    finally:
        partial.unlink(missing_ok=True)
    _write_config(cfg, out)
    return {"iterations": tr.iteration, "last": tr.metrics[-1] if tr.metrics else None}


SCRIPTED = {
    "zero": lambda obs, t: np.zeros((obs.p.shape[0], 6)),
    "sine": lambda obs, t: np.tile(0.5 * np.sin(0.1 * t + np.arange(6)), (obs.p.shape[0], 1)),
}


def benchmark_spec(cfg: RunConfig) -> BenchmarkSpec:
    b = cfg.benchmark
    if b.kind == "mixed":
        track, schedule = mixed_track(b.length)
    else:
        track, schedule = single_task_track(b.kind, b.param, b.count, b.length), [[0.0, b.gait]]
    target = track.track_length if b.target is None else b.target
    return BenchmarkSpec(track, target, b.time_limit, b.trials, schedule, b.v_cmd,
                         randomization=cfg.env.randomization, name=f"{b.kind}:{b.param}")


def cmd_eval(cfg: RunConfig, out: Path, scripted=None):
    spec = benchmark_spec(cfg)
    if scripted:
        if scripted not in SCRIPTED:
            raise ArgumentError(f"unknown scripted policy {scripted!r}; choose from {sorted(SCRIPTED)}")
        controller, method = ScriptedController(SCRIPTED[scripted]), f"scripted:{scripted}"
    else:
        policy = _load_policy(cfg)
        controller, method = PolicyController(policy, cfg.benchmark.privileged), cfg.name
    seeds = [[cfg.seed, 20_000 + k] for k in range(spec.trials)]
    res = run_benchmark(controller, spec, seeds=seeds, env_cfg=cfg.env)
    atomic_write_text(out / "results.csv", results_table({(method, spec.name): res}))
    atomic_write_text(out / "trials.jsonl",
                      _jsonl({"seed": cfg.seed, "trial": k, **t} for k, t in enumerate(res.to_dict()["trials"])))
    _write_config(cfg, out)
    return {"success_rate": res.success_rate, "mean_pass_time": res.mean_pass_time,
            "mean_distance": res.mean_distance}


def cmd_gradconflict(cfg: RunConfig, out: Path):
    g = cfg.gradconflict
    policy = _load_policy(cfg)
    rep = conflict_report(policy, g.tasks, cfg.train, cfg.env, g.epochs, seed=cfg.seed, actor_only=g.actor_only,
                          surrogate_only=g.surrogate_only, warmup=g.warmup)
    atomic_write_text(out / "conflict.tsv", f"# seed\t{cfg.seed}\n" + rep.to_table())
    _write_config(cfg, out)
    cos, neg = rep.mean_offdiag()
    return {"mean_cosine": cos, "mean_negative_ratio": neg}


def cmd_compose(cfg: RunConfig, out: Path, override_path=None):
    path = override_path or cfg.override
    if not path:
        raise ConfigurationError("compose needs an override file")
    ov = load_override(path)
    policy = _load_policy(cfg)
    if ov.n != policy.n_experts:
        raise ConfigurationError(f"override has {ov.n} experts, checkpoint has {policy.n_experts}")
    ev = cfg.evaluation
    env_cfg = cfg.env.with_tasks(ev.tasks)
    res = evaluate_policy(policy, env_cfg, ev.seeds(cfg.seed), ev.privileged, ev.max_steps, ov, record_gates=True)
    trace = []
    for k, gates in enumerate(res.gates):
        applied = ov.apply(gates) if len(gates) else gates
        for t, (g, w) in enumerate(zip(gates, applied)):
            trace.append({"seed": cfg.seed, "episode": k, "task": res.tasks[k], "step": t,
                          "gate": g.tolist(), "applied": w.tolist()})
    summary = {"seed": cfg.seed, "mean_return": res.mean_return, "returns": res.returns.tolist(),
               "lengths": res.lengths.tolist(), "final_x": res.final_x.tolist(), "override": ov.to_dict()}
    atomic_write_text(out / "trace.jsonl", _jsonl(trace))
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    _write_config(cfg, out)
    return {"mean_return": res.mean_return}


def cmd_usage(cfg: RunConfig, out: Path):
    ev = cfg.evaluation
    policy = _load_policy(cfg)
    rollouts = gate_rollouts(policy, cfg.env, ev.tasks, ev.seeds(cfg.seed), ev.max_steps, ev.privileged)
    usage = expert_usage(rollouts)
    n = policy.n_experts
    rows = ["task," + ",".join(f"expert{j}" for j in range(n))]
    rows += [t + "," + ",".join(repr(float(x)) for x in usage[t]) for t in ev.tasks]
    atomic_write_text(out / "usage.csv", "\n".join(rows) + "\n")
    tmp = out / ".gating_samples.jsonl.partial"
    try:
        export_gating_samples(rollouts, tmp)
        os.replace(tmp, out / "gating_samples.jsonl")
    finally:
        tmp.unlink(missing_ok=True)
    _write_config(cfg, out)
    return {t: usage[t].tolist() for t in ev.tasks}


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mtloco", description="Multi-task locomotion training and analysis.")
    ap.add_argument("--version", action="version", version=f"mtloco {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run config YAML (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        return p

    p = common(sub.add_parser("train", help="train stage 1, stage 2 or an adaptation run"))
    p.add_argument("--stage", choices=["1", "2", "adapt"])
    p.add_argument("--source", dest="source_checkpoint", help="source checkpoint for stage 2 / adapt")
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", help="continue from a checkpoint with training state")

    p = common(sub.add_parser("eval", help="run the track benchmark"))
    p.add_argument("--checkpoint")
    p.add_argument("--scripted", help=f"use a scripted policy instead ({', '.join(SCRIPTED)})")

    p = common(sub.add_parser("gradconflict", help="pairwise gradient-conflict matrices"))
    p.add_argument("--checkpoint")
    p.add_argument("--tasks", help="comma-separated task ids")
    p.add_argument("--epochs", type=int)

    p = common(sub.add_parser("compose", help="evaluate with a gating override"))
    p.add_argument("--checkpoint")
    p.add_argument("--override")

    p = common(sub.add_parser("usage", help="per-task expert usage and gating samples"))
    p.add_argument("--checkpoint")
    p.add_argument("--tasks", help="comma-separated task ids")
    return ap


def _resolve_config(args) -> RunConfig:
    top = {"seed": args.seed, "out": args.out, "stage": getattr(args, "stage", None)}
    for key in ("source_checkpoint", "checkpoint", "override"):
        v = getattr(args, key, None)
        top[key] = None if v is None else os.path.abspath(v)
    cfg = load_run_config(args.config, top)
    if getattr(args, "iterations", None) is not None:
        if args.iterations < 0:
            raise ArgumentError("--iterations must be >= 0")
        cfg.train.iterations = args.iterations
    tasks = getattr(args, "tasks", None)
    if tasks:
        names = [t for t in tasks.split(",") if t]
        if args.command == "gradconflict":
            cfg.gradconflict.tasks = names
        else:
            cfg.evaluation.tasks = names
    if getattr(args, "epochs", None) is not None:
        cfg.gradconflict.epochs = args.epochs
    reg = cfg.env.registry()
    listed = cfg.gradconflict.tasks if args.command == "gradconflict" else cfg.evaluation.tasks
    if args.command in ("gradconflict", "usage", "compose"):
        for t in listed:
            if t not in reg:
                raise ArgumentError(f"unknown task {t!r}; known: {', '.join(sorted(reg))}")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        worker_count()
        cfg = _resolve_config(args)
        out = Path(cfg.out)
        if args.command == "train":
            summary = cmd_train(cfg, out, args.resume)
        elif args.command == "eval":
            summary = cmd_eval(cfg, out, args.scripted)
        elif args.command == "gradconflict":
            summary = cmd_gradconflict(cfg, out)
        elif args.command == "compose":
            summary = cmd_compose(cfg, out)
        else:
            summary = cmd_usage(cfg, out)
    except MTLocoError as exc:
        print(f"mtloco {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
