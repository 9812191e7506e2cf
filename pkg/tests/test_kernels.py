"""The compiled kernels and the pure-Python fallback must agree bit for bit."""
import os
import subprocess
import sys

import numpy as np
import pytest

from mtloco import _kernels
from mtloco._kernels import layout as LY
from mtloco.envsuite import EnvConfig, VectorEnv

native = pytest.mark.skipif(_kernels.BACKEND != "native", reason="compiled kernels not built")


def _random_batch(rng, n=64):
    env = VectorEnv(EnvConfig(tasks=["bar_q", "pit_q", "baffle_q", "stair_q", "slope_q", "flat_b", "stair_b",
                                     "flat_q3"]), seeds=list(range(n)))
    env.reset()
    for _ in range(int(rng.integers(0, 50))):
        env.step(rng.uniform(-1.2, 1.2, (n, 6)))
    state = env.state.copy()
    state[:, LY.X] = rng.uniform(0, 30, n)
    state[:, LY.TH] = rng.uniform(-1.2, 1.2, n)
    state[:, LY.T] = rng.uniform(0, 3, n)
    return env, state


@native
@pytest.mark.parametrize("seed", range(5))
def test_step_native_equals_python(seed):
    rng = np.random.default_rng(seed)
    env, state = _random_batch(rng)
    act = rng.uniform(-1.5, 1.5, (env.n, 6))
    noise = rng.normal(size=env.n)
    args = (state, act, noise, env.segs, env.nseg, env.hgrid, env.ngrid, env.params)
    a = _kernels.step_batch(*args, backend="native")
    b = _kernels.step_batch(*args, backend="python")
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


@native
@pytest.mark.parametrize("seed", range(5))
def test_gae_native_equals_python(seed):
    rng = np.random.default_rng(seed)
    shape = (int(rng.integers(1, 30)), int(rng.integers(1, 10)))
    r, v = rng.normal(size=shape), rng.normal(size=shape)
    d = (rng.random(shape) < 0.2).astype(float)
    last = rng.normal(size=shape[1])
    np.testing.assert_array_equal(_kernels.gae(r, v, d, last, 0.99, 0.95, backend="native"),
                                  _kernels.gae(r, v, d, last, 0.99, 0.95, backend="python"))


@native
def test_long_rollout_identical_across_backends():
    cfg = EnvConfig(tasks=["bar_q", "flat_b"])
    envs = [VectorEnv(cfg, seeds=list(range(6)), backend=b) for b in ("native", "python")]
    for e in envs:
        e.reset()
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = rng.uniform(-1, 1, (6, 6))
        oa, ra, _, _ = envs[0].step(a)
        ob, rb, _, _ = envs[1].step(a)
        np.testing.assert_array_equal(oa.p, ob.p)
        np.testing.assert_array_equal(ra, rb)


def test_pure_python_flag_selects_fallback():
    code = "from mtloco import _kernels; print(_kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "MTLOCO_PURE_PYTHON": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_native_backend_request_fails_cleanly(monkeypatch):
    monkeypatch.setattr(_kernels, "_native", None)
    with pytest.raises(RuntimeError):
        _kernels.gae(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)), np.zeros(1), 0.9, 0.9, backend="native")
