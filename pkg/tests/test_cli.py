import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from mtloco.cli import main
from mtloco.errors import ConfigurationError
from mtloco.runconfig import dump_resolved, load_run_config, worker_count

TINY = {"train": {"iterations": 2, "n_envs": 4, "n_steps": 6, "n_minibatch": 2, "n_epochs": 1},
        "env": {"tasks": ["flat_q", "bar_q"]}}


def _write(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def _files(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = _write(d / "tiny.yaml", TINY)
    assert main(["train", "--config", cfg, "--out", str(d / "run")]) == 0
    return d, cfg


def test_train_outputs(trained):
    d, _ = trained
    run = d / "run"
    lines = (run / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(x)["iteration"] for x in lines] == [0, 1]
    assert all(json.loads(x)["seed"] == 0 for x in lines)
    assert (run / "checkpoint" / "policy" / "manifest.json").exists()
    assert yaml.safe_load((run / "config.yaml").read_text())["train"]["iterations"] == 2
    assert not list(run.glob(".*partial"))


def test_rerun_is_byte_identical(trained, tmp_path):
    d, cfg = trained
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    a = _files(d / "run")
    b = _files(tmp_path / "again")
    a.pop("config.yaml"), b.pop("config.yaml")   # records the output directory itself
    assert a == b


def test_seed_changes_outputs(trained, tmp_path):
    d, cfg = trained
    assert main(["train", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "s1")]) == 0
    assert (tmp_path / "s1" / "metrics.jsonl").read_bytes() != (d / "run" / "metrics.jsonl").read_bytes()


def test_resume_matches_straight_run(trained, tmp_path):
    d, cfg = trained
    assert main(["train", "--config", cfg, "--iterations", "3", "--out", str(tmp_path / "straight")]) == 0
    assert main(["train", "--config", cfg, "--iterations", "3", "--resume", str(d / "run" / "checkpoint"),
                 "--out", str(tmp_path / "resumed")]) == 0
    a = (tmp_path / "straight" / "metrics.jsonl").read_text().splitlines()
    b = (tmp_path / "resumed" / "metrics.jsonl").read_text().splitlines()
    assert a[-1] == b[-1]
    pa = (tmp_path / "straight" / "checkpoint" / "policy" / "params.bin").read_bytes()
    pb = (tmp_path / "resumed" / "checkpoint" / "policy" / "params.bin").read_bytes()
    assert pa == pb


def test_stage2_and_adapt(trained, tmp_path):
    d, cfg = trained
    src = str(d / "run" / "checkpoint")
    assert main(["train", "--config", cfg, "--stage", "2", "--source", src, "--out", str(tmp_path / "s2")]) == 0
    assert main(["train", "--config", cfg, "--stage", "adapt", "--source", src, "--out", str(tmp_path / "ad")]) == 0
    from mtloco.trainer import load_checkpoint
    pol, meta, _ = load_checkpoint(tmp_path / "ad" / "checkpoint")
    assert pol.n_experts == 7 and meta["stage"] == "adapt"


def test_eval_scripted(tmp_path):
    cfg = _write(tmp_path / "e.yaml", {"benchmark": {"kind": "flat", "length": 20.0, "time_limit": 4.0,
                                                     "trials": 2}})
    assert main(["eval", "--config", cfg, "--scripted", "zero", "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "results.csv").read_text().splitlines()
    assert rows[1].split(",")[1:] [:2] == ["0.0", "4.0"]
    trials = [json.loads(x) for x in (tmp_path / "o" / "trials.jsonl").read_text().splitlines()]
    assert len(trials) == 2 and all(t["pass_time"] == 4.0 for t in trials)


def test_eval_policy_and_mixed(trained, tmp_path):
    d, _ = trained
    cfg = _write(tmp_path / "e.yaml", {"benchmark": {"kind": "mixed", "length": 40.0, "time_limit": 0.5,
                                                     "trials": 1}})
    assert main(["eval", "--config", cfg, "--checkpoint", str(d / "run" / "checkpoint"),
                 "--out", str(tmp_path / "o")]) == 0


def test_compose_identity_and_doubling(trained, tmp_path):
    d, _ = trained
    ck = str(d / "run" / "checkpoint")
    ones = _write(tmp_path / "ones.yaml", {"weights": [1.0] * 6})
    dbl = _write(tmp_path / "dbl.yaml", {"weights": [2.0, 1, 1, 1, 1, 1]})
    cfg = _write(tmp_path / "c.yaml", {"evaluation": {"tasks": ["flat_q"], "n_seeds": 2, "max_steps": 40}})
    assert main(["compose", "--config", cfg, "--checkpoint", ck, "--override", ones, "--out",
                 str(tmp_path / "a")]) == 0
    assert main(["compose", "--config", cfg, "--checkpoint", ck, "--override", dbl, "--out",
                 str(tmp_path / "b")]) == 0
    ta = [json.loads(x) for x in (tmp_path / "a" / "trace.jsonl").read_text().splitlines()]
    tb = [json.loads(x) for x in (tmp_path / "b" / "trace.jsonl").read_text().splitlines()]
    assert all(r["applied"] == r["gate"] for r in ta)
    for r in tb:
        g = np.array(r["gate"]) * [2, 1, 1, 1, 1, 1]
        np.testing.assert_array_equal(r["applied"], g)     # no renormalisation unless asked
    # identity override leaves the rollout unchanged
    from mtloco.trainer import evaluate_policy, load_checkpoint
    from mtloco.envsuite import EnvConfig
    pol = load_checkpoint(ck)[0]
    base = evaluate_policy(pol, EnvConfig(tasks=["flat_q"]), [[0, 10_000], [0, 10_001]], False, 40)
    summ = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summ["returns"] == base.returns.tolist()


def test_usage_and_gradconflict(trained, tmp_path):
    d, cfg = trained
    ck = str(d / "run" / "checkpoint")
    assert main(["usage", "--config", cfg, "--checkpoint", ck, "--tasks", "flat_q,flat_b",
                 "--out", str(tmp_path / "u")]) == 0
    rows = (tmp_path / "u" / "usage.csv").read_text().splitlines()
    assert rows[0].startswith("task,expert0")
    for r in rows[1:]:
        assert sum(float(x) for x in r.split(",")[1:]) == pytest.approx(1.0, abs=1e-12)
    assert (tmp_path / "u" / "gating_samples.jsonl").stat().st_size > 0
    g = _write(tmp_path / "g.yaml", {**TINY, "gradconflict": {"warmup": 1}})
    assert main(["gradconflict", "--config", g, "--checkpoint", ck, "--epochs", "1",
                 "--out", str(tmp_path / "g")]) == 0
    from mtloco.diagnostics import ConflictReport
    text = (tmp_path / "g" / "conflict.tsv").read_text()
    rep = ConflictReport.from_table(text.split("\n", 1)[1])
    assert rep.tasks == ["bar_q", "baffle_q"]


@pytest.mark.parametrize("argv,needle", [
    (["eval", "--scripted", "nope"], "unknown scripted"),
    (["eval"], "no checkpoint"),
    (["eval", "--checkpoint", "/nonexistent/ck"], "does not exist"),
    (["usage", "--checkpoint", "/x", "--tasks", "flat_q,moon"], "unknown task"),
    (["train", "--iterations", "-1"], "--iterations"),
])
def test_cli_errors(argv, needle, capsys, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert needle in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("name: x\ntrain:\n  iterations: 2\n  lrate: 0.1\n")
    assert main(["train", "--config", str(p)]) == 2
    assert f"{p}:4: unknown key train.lrate" in capsys.readouterr().err


def test_bad_values_and_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("stage: 3\n")
    with pytest.raises(ConfigurationError, match=":1:"):
        load_run_config(p)
    p.write_text("train: {n_envs: 2, n_minibatch: 4}\n")
    with pytest.raises(ConfigurationError, match="n_minibatch"):
        load_run_config(p)
    p.write_text("a: [1,\n")
    with pytest.raises(ConfigurationError, match="bad.yaml:2"):
        load_run_config(p)
    p.write_text("env_path: missing.yaml\n")
    with pytest.raises(ConfigurationError, match="does not exist"):
        load_run_config(p)


def test_worker_env(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("MTLOCO_WORKERS", "zero")
    with pytest.raises(ConfigurationError):
        worker_count()
    assert main(["eval", "--scripted", "zero", "--out", str(tmp_path)]) == 2
    monkeypatch.setenv("MTLOCO_WORKERS", "3")
    assert worker_count() == 3


def test_packaged_configs_load():
    root = Path(__file__).resolve().parents[1] / "src" / "mtloco" / "configs"
    for p in sorted(root.glob("*.yaml")):
        if p.name.startswith("override"):
            continue
        cfg = load_run_config(p)
        assert yaml.safe_load(dump_resolved(cfg))["name"] == cfg.name
    c = load_run_config(root / "compose.yaml")
    assert Path(c.override) == root / "override_double.yaml"


def test_referenced_files_merge(tmp_path):
    _write(tmp_path / "env.yaml", {"tasks": ["pit_q"]})
    _write(tmp_path / "train.yaml", {"lr": 0.002, "n_envs": 8})
    p = _write(tmp_path / "run.yaml", {"env_path": "env.yaml", "train_path": "train.yaml", "train": {"n_envs": 16}})
    cfg = load_run_config(p)
    assert cfg.env.tasks == ["pit_q"] and cfg.train.lr == 0.002 and cfg.train.n_envs == 16


def test_outputs_record_config_and_version(trained):
    from mtloco import __version__
    d, _ = trained
    cfg = yaml.safe_load((d / "run" / "config.yaml").read_text())
    assert cfg["version"] == __version__ and cfg["seed"] == 0 and cfg["env"]["tasks"] == ["flat_q", "bar_q"]
    man = json.loads((d / "run" / "checkpoint" / "policy" / "manifest.json").read_text())
    assert man["extra"]["config"]["train"]["iterations"] == 2 and man["extra"]["version"] == __version__
