import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtloco.envsuite import (DT, Command, DelayBuffer, DynamicsConfig, EnvConfig, EnvState, LocoEnv,
                             NoiseAmplitudes, RandomizationRanges, Segment, TaskSpec, TerrainSpec,
                             TrackTemplate, TrajectoryRecorder, VectorEnv, base_height, builtin_tasks,
                             check_termination, generate_track, latency_steps, load_randomization,
                             load_terrain, make_rng, observe, reset, reward_bipedal, reward_quadruped,
                             sample_initial_state, step_state)
from mtloco.envsuite.state import proprio_truth
from mtloco.errors import ArgumentError, ConfigurationError, ContractError

DYN = DynamicsConfig()


def flat_track(z_max=0.0):
    return generate_track(TerrainSpec.flat(30.0, z_max), make_rng(0))


# ---------------------------------------------------------------- terrain

def test_flat_track_without_noise_is_zero():
    tr = flat_track()
    assert np.all(tr.heights == 0.0)


def test_single_bar_profile():
    spec = TerrainSpec([Segment("flat", 5.0), Segment("bar", 0.2, 0.2), Segment("flat", 4.8)], 10.0)
    tr = generate_track(spec, make_rng(0))
    xs, h = tr.xs, tr.heights
    on = (xs >= 5.0) & (xs < 5.2)
    assert np.all(h[on] == 0.2)
    assert np.all(h[~on] == 0.0)
    assert base_height(spec, 5.1) == 0.2


def test_fractal_noise_bounded_and_reproducible():
    spec = TerrainSpec.flat(30.0, 0.1)
    a = generate_track(spec, make_rng(7)).noise
    b = generate_track(spec, make_rng(7)).noise
    np.testing.assert_array_equal(a, b)
    assert np.max(np.abs(a)) <= 0.1
    assert np.max(np.abs(a)) > 0.0


def test_terrain_validation():
    with pytest.raises(ConfigurationError):
        TerrainSpec([Segment("flat", 5.0)], 6.0)
    with pytest.raises(ConfigurationError):
        Segment("lava", 1.0)
    with pytest.raises(ConfigurationError):
        Segment("bar", 0.2, 0.5)
    with pytest.raises(ConfigurationError):
        RandomizationRanges(friction=(1.0, 0.5))


def test_track_template_tiles_the_track():
    for kind in ("bar", "pit", "baffle", "stair", "slope"):
        spec = TrackTemplate(kind).sample(make_rng(3))
        assert sum(s.length for s in spec.segments) == pytest.approx(30.0)
        assert sum(s.kind == kind for s in spec.segments) == 5


def test_yaml_loaders(tmp_path):
    (tmp_path / "t.yaml").write_text("segments:\n  - {kind: flat, length: 3}\n  - {kind: bar, length: 0.2, "
                                     "param: 0.1}\n  - {kind: flat, length: 1.8}\ntrack_length: 5\n")
    spec = load_terrain(tmp_path / "t.yaml")
    assert [s.kind for s in spec.segments] == ["flat", "bar", "flat"]
    (tmp_path / "r.yaml").write_text("friction: [0.6, 0.9]\nnoise: {theta: 0.0}\n")
    r = load_randomization(tmp_path / "r.yaml")
    assert r.friction == (0.6, 0.9) and r.noise.theta == 0.0
    (tmp_path / "bad.yaml").write_text("segments: [\n")
    with pytest.raises(ConfigurationError):
        load_terrain(tmp_path / "bad.yaml")
    (tmp_path / "bad2.yaml").write_text("friction: [0.9, 0.6]\n")
    with pytest.raises(ConfigurationError):
        load_randomization(tmp_path / "bad2.yaml")


# ---------------------------------------------------------------- reset

def test_degenerate_reset_is_nominal():
    task = builtin_tasks()["flat_q"]
    st_, obs, _ = reset(TerrainSpec.flat(), RandomizationRanges.degenerate(), task, make_rng(0))
    assert st_.friction == 1.0 and st_.motor == 1.0 and st_.velocity_gain == 1.0
    assert st_.z_base == DYN.z_nominal and st_.theta == 0.0
    np.testing.assert_array_equal(st_.limbs, np.full(4, 0.5))
    assert st_.x == 0.0 and st_.t == 0.0
    np.testing.assert_array_equal(obs.p, proprio_truth(st_.to_vector()[None])[0])


def test_reset_is_deterministic_per_seed():
    task = builtin_tasks()["bar_q"]
    a = reset(TerrainSpec.flat(), RandomizationRanges(), task, make_rng(11))
    b = reset(TerrainSpec.flat(), RandomizationRanges(), task, make_rng(11))
    np.testing.assert_array_equal(a[0].to_vector(), b[0].to_vector())
    np.testing.assert_array_equal(a[1].p, b[1].p)


def test_reset_friction_within_bounds():
    r = RandomizationRanges()
    rng = make_rng(5)
    mus = [sample_initial_state(builtin_tasks()["flat_q"], DYN, r, rng)[0].friction for _ in range(1000)]
    assert min(mus) >= r.friction[0] and max(mus) <= r.friction[1]
    assert max(mus) - min(mus) > 0.5 * (r.friction[1] - r.friction[0])


# ---------------------------------------------------------------- dynamics

def test_zero_action_velocity_decays_without_termination():
    s = EnvState(v=0.8)
    track = flat_track()
    cmd = Command(0.5, 0)
    vs = []
    for _ in range(50):
        s, _, done, _ = step_state(s, np.zeros(6), cmd, track)
        assert not done
        vs.append(s.v)
    assert all(b < a for a, b in zip(vs, vs[1:]))
    assert vs[-1] < 0.1


def test_non_finite_action_rejected():
    with pytest.raises(ArgumentError):
        step_state(EnvState(), [np.nan] * 6, Command(0.5, 0), flat_track())


def test_bar_blocks_low_limbs():
    spec = TerrainSpec([Segment("flat", 1.0), Segment("bar", 0.2, 0.2), Segment("flat", 8.8)], 10.0)
    track = generate_track(spec, make_rng(0))
    s = EnvState(x=1.05, v=0.5, limbs=np.full(4, 0.2))
    s2, _, _, info = step_state(s, [-1, -1, -1, -1, 0, 0], Command(0.5, 0), track)
    assert s2.v == 0.0 and info["blocked"]
    assert np.all(s2.contact > DYN.contact_load * (1 - s2.limbs))


def oracle_drive_rollout(actions, dyn, mu=1.0, motor=1.0, vgain=1.0):
    """Independent re-derivation of the flat-ground quadruped drive law."""
    limbs = np.full(4, 0.5)
    v = x = 0.0
    for a in actions:
        tgt = 0.5 + 0.5 * np.clip(a[:4], -1, 1)
        new = np.clip(limbs + dyn.dt * dyn.kappa_limb * (tgt - limbs), 0.0, 1.0)
        amp = np.mean(np.abs((new - limbs) / dyn.dt))
        limbs = new
        drive = mu * motor * dyn.drive_gain * amp
        v = v + dyn.dt * dyn.kappa_v * (vgain * drive - v)
        x = x + dyn.dt * v
    return x, v


def test_oscillating_action_matches_closed_form_drive():
    acts = [np.array([1, -1, 1, -1, 0, 0.0]) * (1 if (k // 5) % 2 == 0 else -1) for k in range(100)]
    s = EnvState(limbs=np.full(4, 0.5), friction=0.8, motor=1.05, velocity_gain=0.95)
    track = flat_track()
    for a in acts:
        s, _, done, _ = step_state(s, a, Command(0.5, 0), track)
        assert not done
    x, v = oracle_drive_rollout(acts, DYN, 0.8, 1.05, 0.95)
    assert s.x > 0.5
    assert s.x == pytest.approx(x, rel=1e-12)
    assert s.v == pytest.approx(v, rel=1e-12)


def _state_in(kind, param, **kw):
    spec = TerrainSpec([Segment("flat", 1.0), Segment(kind, 0.6 if kind == "baffle" else 0.2, param),
                        Segment("flat", 8.8 if kind != "baffle" else 8.4)], 10.0)
    return generate_track(spec, make_rng(0)), EnvState(x=1.05, v=0.4, **kw)


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 0.2))
def test_bar_gate_monotone_in_lift(a_lo, a_hi, height):
    a_lo, a_hi = sorted((a_lo, a_hi))
    track, s = _state_in("bar", height)
    lo, _, _, info_lo = step_state(s, [a_lo] * 4 + [0, 0], Command(0.5, 0), track)
    hi, _, _, info_hi = step_state(s, [a_hi] * 4 + [0, 0], Command(0.5, 0), track)
    # more lift never closes an open gate
    assert not info_hi["blocked"] or info_lo["blocked"]
    for st_, info in ((lo, info_lo), (hi, info_hi)):
        assert (st_.v == 0.0) == info["blocked"]


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.22, 0.3))
def test_baffle_gate_monotone_in_posture(z_a, z_b, gap):
    z_lo, z_hi = sorted((z_a, z_b))
    track, s = _state_in("baffle", gap)
    act = [0.5, -0.5, 0.5, -0.5]
    low, _, _, _ = step_state(s, act + [z_lo, 0], Command(0.5, 0), track)
    high, _, _, _ = step_state(s, act + [z_hi, 0], Command(0.5, 0), track)
    # posture does not enter the drive, so only the gate separates the two
    assert low.v >= high.v


def test_termination_is_absorbing():
    s = EnvState(theta=1.5)
    s2, rew, done, _ = step_state(s, np.zeros(6), Command(0.5, 0), flat_track())
    assert done and s2.done
    s3, rew3, done3, _ = step_state(s2, np.ones(6), Command(0.5, 0), flat_track())
    assert done3 and rew3 == 0.0
    np.testing.assert_array_equal(s3.to_vector(), s2.to_vector())


# ---------------------------------------------------------------- rewards

def test_quadruped_tracking_peak_is_weight():
    s = EnvState(v=0.6, limb_vel=np.zeros(4), limb_acc=np.zeros(4), z_base=DYN.z_target_quad)
    total, terms = reward_quadruped(s, Command(0.6, 0), np.zeros(6), False)
    assert terms["tracking"] == 7.0
    assert terms["alive"] == 1.0 and terms["termination"] == 0.0
    assert total == 8.0


def test_quadruped_done_has_no_alive_bonus():
    total, terms = reward_quadruped(EnvState(v=0.5), Command(0.5, 0), np.zeros(6), True)
    assert terms["termination"] == -1.0 and terms["alive"] == 0.0


def test_gait_contract():
    with pytest.raises(ContractError):
        reward_quadruped(EnvState(), Command(0.5, 1), np.zeros(6), False)
    with pytest.raises(ContractError):
        reward_bipedal(EnvState(), Command(0.5, 0), np.zeros(6), False)


def test_bipedal_stand_terms():
    _, terms = reward_bipedal(EnvState(theta=0.0, z_base=0.6), Command(0.5, 1), np.zeros(6), False)
    assert terms["orientation"] == 1.0 and terms["stand_height"] == 0.8
    _, mid = reward_bipedal(EnvState(theta=0.0, z_base=0.4), Command(0.5, 1), np.zeros(6), False)
    assert mid["stand_height"] == pytest.approx(0.4, abs=1e-15)


def test_bipedal_tracking_gate_closed():
    s = EnvState(theta=math.acos(0.9), z_base=0.6, v=0.5)
    _, terms = reward_bipedal(s, Command(0.5, 1), np.zeros(6), False)
    assert terms["tracking"] == 0.0


def test_bipedal_tracking_scaled_by_height():
    s = EnvState(theta=0.0, z_base=0.4, v=0.5)
    _, terms = reward_bipedal(s, Command(0.5, 1), np.zeros(6), False)
    assert terms["tracking"] == pytest.approx(3.0 * 0.5, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0, 1]), st.booleans())
def test_breakdown_sums_to_total(seed, gait, done):
    r = np.random.default_rng(seed)
    s = EnvState(v=r.uniform(-1, 2), z_base=r.uniform(0, 0.6), theta=r.uniform(-1, 1),
                 theta_rate=r.uniform(-3, 3), limb_vel=r.normal(size=4) * 5, limb_acc=r.normal(size=4) * 100,
                 limbs=r.uniform(0, 1, 4), prev_action=r.uniform(-1, 1, 6), suppress_limb=int(r.integers(-1, 4)))
    fn = reward_quadruped if gait == 0 else reward_bipedal
    total, terms = fn(s, Command(r.uniform(0, 1.5), gait), r.uniform(-1, 1, 6), done)
    assert abs(total - math.fsum(terms.values())) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(0, 1.5))
def test_tracking_in_range_and_peaked(v, cmd):
    _, terms = reward_quadruped(EnvState(v=v), Command(cmd, 0), np.zeros(6), False)
    _, peak = reward_quadruped(EnvState(v=cmd), Command(cmd, 0), np.zeros(6), False)
    assert 0.0 <= terms["tracking"] <= 7.0
    assert terms["tracking"] <= peak["tracking"] == 7.0


# ---------------------------------------------------------------- termination

def test_termination_rules():
    fallen = EnvState(theta=2.0, z_base=0.1)
    assert not check_termination(fallen, 1, 0.5)
    assert check_termination(fallen, 1, 1.5)
    assert check_termination(EnvState(theta=1.2), 0, 0.1)
    upright = EnvState(theta=0.0, z_base=0.45)
    assert not check_termination(upright, 0, 5.0) and not check_termination(upright, 1, 5.0)


# ---------------------------------------------------------------- observation

def test_observation_equals_truth_without_noise_and_latency():
    states = np.stack([EnvState(theta=0.1, limbs=np.array([0.1, 0.2, 0.3, 0.4])).to_vector()])
    buf = DelayBuffer(1, 1)
    buf.fill(0, proprio_truth(states)[0])
    obs = observe(states, buf, [0], np.ones((1, 17)), np.zeros(17))
    np.testing.assert_array_equal(obs.p[0], proprio_truth(states)[0])


def test_latency_two_steps():
    assert latency_steps(0.04, DT) == 2
    buf = DelayBuffer(1, latency_steps(0.045, DT) + 1)
    buf.fill(0, np.zeros(17))
    for t in range(1, 6):
        buf.push(0, np.full(17, float(t)))
    assert buf.read(0, 2)[0] == 3.0
    with pytest.raises(ArgumentError):
        buf.read(0, buf.depth)


def test_noise_std_matches_amplitude():
    amps = NoiseAmplitudes().vector()
    states = np.zeros((1, 40))
    buf = DelayBuffer(1, 1)
    rng = make_rng(3)
    samples = np.stack([observe(states, buf, [0], rng.standard_normal((1, 17)), amps).p[0] for _ in range(10_000)])
    on = amps > 0
    np.testing.assert_allclose(samples.std(axis=0)[on], amps[on], rtol=0.05)


# ---------------------------------------------------------------- vector env

def _run(env, steps, seed=0):
    r = np.random.default_rng(seed)
    env.reset()
    out = []
    for _ in range(steps):
        obs, rew, done, _ = env.step(r.uniform(-1, 1, (env.n, 6)))
        out.append((obs.p.copy(), rew.copy(), done.copy()))
    return out


def test_single_instance_matches_loco_env():
    cfg = EnvConfig(tasks=["bar_q"])
    vec = VectorEnv(cfg, seeds=[42], auto_reset=False)
    single = LocoEnv(cfg, seed=42)
    vec.reset()
    single.reset()
    r = np.random.default_rng(0)
    for _ in range(100):
        a = r.uniform(-1, 1, 6)
        o1, r1, d1, _ = vec.step(a[None])
        o2, r2, d2, _ = single.step(a)
        np.testing.assert_array_equal(o1.p[0], o2.p)
        assert r1[0] == r2 and d1[0] == d2


def test_batched_equals_sequential():
    cfg = EnvConfig(tasks=["flat_q", "bar_q", "flat_b"])
    seeds = [[3, k] for k in range(8)]
    vec = VectorEnv(cfg, seeds=seeds)
    vec.reset()
    singles = [VectorEnv(cfg, seeds=[s]) for s in seeds]
    for e in singles:
        e.reset()
    r = np.random.default_rng(1)
    for _ in range(300):
        a = r.uniform(-1, 1, (8, 6))
        ob, rw, dn, _ = vec.step(a)
        for k, e in enumerate(singles):
            o, rr, d, _ = e.step(a[k:k + 1])
            np.testing.assert_array_equal(ob.p[k], o.p[0])
            assert rw[k] == rr[0] and dn[k] == d[0]


def test_auto_reset_starts_new_episode():
    cfg = EnvConfig(tasks=["flat_q"])
    env = VectorEnv(cfg, seeds=[0, 1])
    env.reset()
    env.state[0, 11] = 5.0   # tip instance 0 over
    _, _, done, info = env.step(np.zeros((2, 6)))
    assert done[0] and not done[1]
    assert info["episodes"][0]["instance"] == 0
    assert env.state[0, 39] == 0.0 and env.state[1, 39] == 1.0


def test_env_state_snapshot_resumes_exactly():
    cfg = EnvConfig(tasks=["flat_q", "baffle_q"])
    a = VectorEnv(cfg, seeds=[0, 1, 2])
    _run(a, 50)
    arrays, meta = a.get_state()
    b = VectorEnv(cfg, seeds=[0, 1, 2])
    b.set_state(arrays, meta)
    r = np.random.default_rng(9)
    for _ in range(100):
        act = r.uniform(-1, 1, (3, 6))
        oa, ra, _, _ = a.step(act)
        ob, rb, _, _ = b.step(act)
        np.testing.assert_array_equal(oa.p, ob.p)
        np.testing.assert_array_equal(ra, rb)


def test_timeout_flag_and_episode_length():
    dyn = DynamicsConfig(max_episode_s=0.2)
    cfg = EnvConfig(tasks=["flat_q"], dynamics=dyn, randomization=RandomizationRanges.degenerate())
    env = VectorEnv(cfg, seeds=[0], auto_reset=False)
    env.reset()
    for k in range(10):
        _, _, done, info = env.step(np.zeros((1, 6)))
    assert done[0] and info["timeout"][0] and not info["terminated"][0]
    assert info["episodes"][0]["length"] == 10


def test_trajectory_recorder(tmp_path):
    cfg = EnvConfig(tasks=["flat_q"])
    env = LocoEnv(cfg, seed=0)
    env.reset()
    with TrajectoryRecorder(tmp_path / "traj.jsonl") as rec:
        for _ in range(3):
            _, rew, _, info = env.step(np.zeros(6))
            rec.record(env.state, np.zeros(6), info["terms"], rew)
    lines = (tmp_path / "traj.jsonl").read_text().splitlines()
    assert len(lines) == 3 and '"step": 2' in lines[2]


def test_bar_and_baffle_reward_different_postures():
    """A high-lift gait wins at a bar and a crouched gait wins at a baffle."""
    def run(kind, param, gait):
        spec = TerrainSpec([Segment("flat", 0.3), Segment(kind, 0.2 if kind == "bar" else 0.6, param),
                            Segment("flat", 9.5 if kind == "bar" else 9.1)], 10.0)
        s = EnvState(x=0.0, limbs=np.full(4, 0.5), z_base=0.3)
        track = generate_track(spec, make_rng(0))
        total = 0.0
        for k in range(150):
            sign = 1 if (k // 4) % 2 == 0 else -1
            osc = np.array([sign, -sign, sign, -sign])
            a = np.r_[0.6 + 0.4 * osc, 0.5, 0.0] if gait == "lift" else np.r_[0.15 * osc, -0.5, 0.0]
            s, rew, done, _ = step_state(s, a, Command(0.6, 0), track)
            total += rew
            assert not done
        return s.x, total

    bar_lift, bar_crouch = run("bar", 0.15, "lift"), run("bar", 0.15, "crouch")
    baf_lift, baf_crouch = run("baffle", 0.22, "lift"), run("baffle", 0.22, "crouch")
    assert bar_lift[0] > bar_crouch[0] and bar_lift[1] > bar_crouch[1]
    assert baf_crouch[0] > baf_lift[0] and baf_crouch[1] > baf_lift[1]
