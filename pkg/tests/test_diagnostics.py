import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtloco.diagnostics import (ConflictReport, TaskGradient, conflict_report, cosine_similarity,
                                export_gating_samples, expert_usage, gate_rollouts, gradient_names,
                                load_gating_samples, negative_entry_ratio, task_gradient, usage_l1)
from mtloco.envsuite import EnvConfig
from mtloco.errors import ArgumentError
from mtloco.trainer import TrainConfig, build_policy
from mtloco.diagnostics import collect_task_batches

vec = st.lists(st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=False), min_size=1, max_size=12)


def test_metric_oracles():
    g = [0.3, -2.0, 5.0]
    assert cosine_similarity(g, g) == 1.0
    assert negative_entry_ratio(g, g) == 0.0
    assert cosine_similarity([1, 2], [2, 1]) == pytest.approx(0.8, abs=1e-15)
    assert negative_entry_ratio([1, -1, 2], [1, 1, 2]) == 1 / 3


def test_zero_coordinates_excluded():
    assert negative_entry_ratio([0, -1, 2], [5, 1, 2]) == 0.5
    assert negative_entry_ratio([0, 0], [1, 1]) == 0.0


def test_metric_errors():
    with pytest.raises(ArgumentError):
        cosine_similarity([0, 0], [1, 1])
    with pytest.raises(ArgumentError):
        cosine_similarity([1], [1, 2])
    with pytest.raises(ArgumentError):
        negative_entry_ratio([1], [1, 2])


@given(vec, st.floats(0.01, 100))
def test_metric_invariants(v, scale):
    a = np.array(v)
    b = np.roll(a, 1) + 0.5
    if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
        return
    c = cosine_similarity(a, b)
    assert -1 <= c <= 1
    assert c == pytest.approx(cosine_similarity(b, a), abs=1e-12)
    assert c == pytest.approx(cosine_similarity(scale * a, b), abs=1e-9)
    assert cosine_similarity(a, -a) == pytest.approx(-1.0, abs=1e-12)
    r = negative_entry_ratio(a, b)
    assert 0 <= r <= 1
    assert r == negative_entry_ratio(b, a) == negative_entry_ratio(scale * a, b)


def test_report_table_round_trip():
    grads = [TaskGradient("a", np.array([1.0, 2.0, 0.0]), 1), TaskGradient("b", np.array([2.0, 1.0, 1.0]), 1),
             TaskGradient("c", np.array([-1.0, 1.0, 3.0]), 1)]
    rep = ConflictReport.from_gradients(grads, 3)
    assert rep.cosine[0, 1] == pytest.approx(4 / np.sqrt(30), abs=1e-15)
    np.testing.assert_array_equal(rep.cosine, rep.cosine.T)
    np.testing.assert_array_equal(np.diag(rep.cosine), 1.0)
    back = ConflictReport.from_table(rep.to_table())
    np.testing.assert_array_equal(back.cosine, rep.cosine)
    np.testing.assert_array_equal(back.negative, rep.negative)
    assert back.tasks == rep.tasks and back.epochs == 3
    cos, neg = rep.mean_offdiag()
    assert cos == pytest.approx(np.mean([rep.cosine[0, 1], rep.cosine[0, 2], rep.cosine[1, 2]]))


def _batches(task, n=2):
    pol = build_policy(None, 0)
    cfg = TrainConfig(n_envs=4, n_steps=6, n_minibatch=2)
    return pol, cfg, collect_task_batches(pol, EnvConfig(tasks=[task]), cfg, n)


def test_task_gradient_is_epoch_mean():
    pol, cfg, bs = _batches("flat_q")
    one = task_gradient(pol, bs[:1], 1, cfg).vector
    two = task_gradient(pol, bs[1:], 1, cfg).vector
    both = task_gradient(pol, bs, 2, cfg)
    np.testing.assert_allclose(both.vector, (one + two) / 2, rtol=0, atol=1e-15)
    assert both.task == "flat_q" and len(both.names) == len(gradient_names(pol))
    with pytest.raises(ArgumentError):
        task_gradient(pol, [], 1, cfg)


def test_mixed_task_batches_rejected():
    pol, cfg, a = _batches("flat_q", 1)
    _, _, b = _batches("bar_q", 1)
    with pytest.raises(ArgumentError):
        task_gradient(pol, a + b, 2, cfg)


def test_actor_only_names():
    pol = build_policy(None, 0)
    names = gradient_names(pol, actor_only=True)
    assert names and not any(n.startswith(("critic.", "est.")) for n in names)


def test_conflict_report_leaves_policy_untouched():
    pol = build_policy(None, 0)
    snap = pol.store.flatten()
    cfg = TrainConfig(n_envs=4, n_steps=6, n_minibatch=2)
    rep = conflict_report(pol, ["flat_q", "bar_q"], cfg, n_epochs=2, warmup=1)
    np.testing.assert_array_equal(pol.store.flatten(), snap)
    assert rep.cosine.shape == (2, 2) and -1 <= rep.cosine[0, 1] <= 1
    with pytest.raises(ArgumentError):
        conflict_report(pol, ["flat_q"], cfg)
    with pytest.raises(ArgumentError):
        conflict_report(pol, ["flat_q", "nope"], cfg)


def test_expert_usage_mean_and_l1():
    use = expert_usage({"a": [np.array([[1.0, 0.0], [0.0, 1.0]])], "b": np.array([[1.0, 0.0]])})
    np.testing.assert_array_equal(use["a"], [0.5, 0.5])
    assert usage_l1(use, "a", "b") == 1.0
    with pytest.raises(ArgumentError):
        expert_usage({"a": []})


def test_gating_samples_round_trip(tmp_path):
    pol = build_policy(None, 0)
    ro = gate_rollouts(pol, EnvConfig(), ["flat_q", "flat_b"], [0, 1], max_steps=10)
    n = export_gating_samples(ro, tmp_path / "g.jsonl")
    assert n == 40
    back = load_gating_samples(tmp_path / "g.jsonl")
    for t in ro:
        np.testing.assert_array_equal(back[t], np.concatenate(ro[t]))
        np.testing.assert_allclose(back[t].sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(ArgumentError):
        export_gating_samples({}, tmp_path / "x.jsonl")


@given(vec, st.integers(-20, 20))
def test_cosine_of_positive_multiple(v, k):
    a = np.array(v)
    if not np.any(a):
        return
    assert cosine_similarity(np.ldexp(a, k), a) == 1.0        # power-of-two multiples are exact
    assert cosine_similarity(3.7 * a, a) == pytest.approx(1.0, abs=1e-12)
    b = a.copy()
    k = int(np.argmax(np.abs(a)))
    b[k] = -b[k]                                   # no longer a positive multiple
    assert cosine_similarity(b, a) < 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 7))
def test_expert_usage_is_convex(seed, n):
    rng = np.random.default_rng(seed)
    samples = [rng.dirichlet(np.ones(n), size=int(rng.integers(1, 20))) for _ in range(3)]
    u = expert_usage({"t": samples})["t"]
    assert np.all(u >= 0) and abs(u.sum() - 1.0) <= 1e-9
