"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py --envs 64 --repeat 20
"""
import argparse
import timeit

import numpy as np

from mtloco import _kernels
from mtloco.envsuite import EnvConfig, VectorEnv


def bench_step(n_envs, repeat, backend):
    env = VectorEnv(EnvConfig(tasks=["bar_q", "baffle_q", "flat_b"]), seeds=list(range(n_envs)), backend=backend)
    env.reset()
    rng = np.random.default_rng(0)
    acts = rng.uniform(-1, 1, (repeat, n_envs, 6))
    it = iter(acts)
    return min(timeit.repeat(lambda: env.step(next(it)), number=1, repeat=repeat))


def bench_gae(n_steps, n_envs, repeat, backend):
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=(n_steps, n_envs)), rng.normal(size=(n_steps, n_envs))
    d = (rng.random((n_steps, n_envs)) < 0.05) * 1.0
    last = rng.normal(size=n_envs)
    return min(timeit.repeat(lambda: _kernels.gae(r, v, d, last, 0.99, 0.95, backend=backend), number=1,
                             repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--envs", type=int, default=64)
    ap.add_argument("--steps", type=int, default=24)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = ["python"] + (["native"] if _kernels._native is not None else [])
    print(f"default backend: {_kernels.BACKEND}")
    print(f"{'kernel':<12}{'backend':<10}{'best ms':>10}")
    res = {}
    for b in backends:
        res["env step", b] = bench_step(args.envs, args.repeat, b)
        res["gae", b] = bench_gae(args.steps, args.envs, args.repeat, b)
    for (k, b), t in res.items():
        print(f"{k:<12}{b:<10}{1e3 * t:>10.3f}")
    if "native" in backends:
        for k in ("env step", "gae"):
            print(f"{k} speedup: {res[k, 'python'] / res[k, 'native']:.1f}x")


if __name__ == "__main__":
    main()
