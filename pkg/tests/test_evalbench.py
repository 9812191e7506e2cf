import numpy as np
import pytest

from mtloco.envsuite import EnvConfig
from mtloco.errors import ArgumentError, ConfigurationError
from mtloco.evalbench import (BenchmarkSpec, PolicyController, ScriptedController, TrialResult, aggregate,
                              mixed_track, results_table, run_benchmark, run_trial, score_trajectory,
                              single_task_track)
from mtloco.trainer import build_policy

DT = 0.02


def _spec(**kw):
    kw = {"track": single_task_track("flat", 0.0, length=30.0), "target": 10.0, "time_limit": 40.0, **kw}
    return BenchmarkSpec(**kw)


def test_success_time_is_first_step_within_radius():
    xs = np.arange(1, 3000) / 16.0          # exact binary steps of 1/16 m
    r = score_trajectory(xs, DT, _spec())
    assert r.success and r.cause == "none"
    assert r.pass_time == 144 * DT          # x = 9 after step 144
    assert r.distance == 9.0


def test_stuck_robot_fails_with_time_limit():
    xs = np.minimum(np.arange(1, 3000) / 25.0, 2.0)
    r = score_trajectory(xs, DT, _spec())
    assert not r.success and r.cause == "stuck"
    assert r.pass_time == 40.0 and r.distance == 2.0


def test_slow_robot_times_out():
    xs = np.arange(1, 5000) / 1024.0
    r = score_trajectory(xs, DT, _spec())
    assert r.cause == "timeout" and r.pass_time == 40.0
    assert r.distance == 2000 / 1024.0


def test_fall_and_clip():
    xs = np.arange(1, 100) / 4.0
    r = score_trajectory(xs, DT, _spec(target=29.0), terminated_at=10, fell=True)
    assert r.cause == "fell" and r.distance == 11 / 4.0 and r.pass_time == 40.0
    r = score_trajectory([-1.0], DT, _spec(), terminated_at=0)
    assert r.cause == "terminated" and r.distance == 0.0
    far = score_trajectory(np.full(10, 50.0), DT, _spec(target=20.0, time_limit=0.1))
    assert far.distance == 30.0


def test_aggregate_is_hand_computable():
    spec = _spec()
    trials = [score_trajectory(np.arange(1, 3000) / 16.0, DT, spec),
              score_trajectory(np.minimum(np.arange(1, 3000) / 25.0, 2.0), DT, spec),
              score_trajectory(np.arange(1, 5000) / 1024.0, DT, spec),
              score_trajectory(np.zeros(5), DT, spec, terminated_at=2, fell=True)]
    res = aggregate(trials)
    assert res.success_rate == 0.25
    assert res.mean_pass_time == pytest.approx((2.88 + 3 * 40.0) / 4, abs=1e-12)
    assert res.mean_distance == pytest.approx((9.0 + 2.0 + 2000 / 1024.0 + 0.0) / 4, abs=1e-12)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        _spec(target=31.0)
    with pytest.raises(ConfigurationError):
        _spec(time_limit=0.0)
    with pytest.raises(ConfigurationError):
        _spec(gait_schedule=[[1.0, 0]])
    with pytest.raises(ArgumentError):
        TrialResult(False, 1.0, 0.0, "exploded")
    with pytest.raises(ArgumentError):
        aggregate([])


def test_gait_schedule():
    track, sched = mixed_track(40.0)
    spec = BenchmarkSpec(track, 39.0, gait_schedule=sched)
    assert track.track_length == 40.0
    assert spec.gait_at(0.0) == 0 and spec.gait_at(39.0) == 1


def test_run_trial_accounting_matches_positions():
    """The env loop scores exactly the x positions the robot visited."""
    spec = _spec(time_limit=6.0, target=20.0)
    seen = []

    def ctl(obs, t):
        return np.tile(0.5 * np.sin(0.1 * t + np.arange(6)), (1, 1))

    class Recorder(ScriptedController):
        def __call__(self, obs, t):
            seen.append(t)
            return super().__call__(obs, t)

    r = run_trial(Recorder(ctl), spec, 0)
    assert not r.success and r.pass_time == 6.0
    assert 0.0 <= r.distance <= 30.0
    again = run_trial(ctl, spec, 0)
    assert again == r


def test_scripted_stationary_trial_fails():
    res = run_benchmark(lambda o, t: np.zeros((1, 6)), _spec(time_limit=8.0, trials=2), seeds=[0, 1])
    assert res.success_rate == 0.0 and res.mean_pass_time == 8.0
    assert all(t.pass_time == 8.0 for t in res.trials)


def test_policy_controller_runs():
    spec = _spec(time_limit=0.5)
    res = run_benchmark(PolicyController(build_policy(None, 0)), spec, n_trials=1,
                        env_cfg=EnvConfig())
    assert len(res.trials) == 1
    with pytest.raises(ArgumentError):
        run_benchmark(PolicyController(build_policy(None, 0)), spec, n_trials=3, seeds=[1])
    with pytest.raises(ArgumentError):
        run_trial(42, spec, 0)


def test_results_table():
    a = aggregate([TrialResult(True, 2.0, 10.0, "none")])
    b = aggregate([TrialResult(False, 40.0, 3.0, "stuck")])
    text = results_table({("m1", "bar"): a, ("m2", "bar"): b, ("m1", "pit"): b})
    rows = [ln.split(",") for ln in text.strip().splitlines()]
    assert rows[0][:3] == ["method", "success_rate:bar", "success_rate:pit"]
    assert rows[1][:3] == ["m1", "1.0", "0.0"]
    assert rows[2][2] == ""


from hypothesis import given, settings, strategies as st


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 0.2), min_size=1, max_size=400), st.integers(0, 50))
def test_metric_ranges_and_earlier_arrival_never_worse(steps, shift):
    spec = _spec(target=5.0, time_limit=6.0)
    xs = np.cumsum(steps)
    r = score_trajectory(xs, DT, spec)
    assert 0 < r.pass_time <= spec.time_limit
    assert 0.0 <= r.distance <= spec.track.track_length
    # the same path reached ``shift`` steps earlier
    better = score_trajectory(np.concatenate([xs[shift:], np.full(shift, xs[-1])]) if shift < len(xs) else xs,
                              DT, spec)
    assert better.success >= r.success
    if r.success:
        assert better.pass_time <= r.pass_time
