"""Hot loops: the batched environment step and the GAE recursion.

The compiled ``_native`` extension is used when it was built and imports
cleanly; otherwise (or with ``MTLOCO_PURE_PYTHON=1``) the pure-Python
``_fallback`` is used.  Both produce bit-identical results.
"""
from __future__ import annotations

import importlib
import os

import numpy as np

from . import _fallback
from .layout import N_PARAMS, N_TERMS, STATE_DIM

_native = None
if os.environ.get("MTLOCO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        _native = importlib.import_module(f"{__name__}._native")
    except ImportError:  # extension not built
        _native = None

if _native is not None:
    assert _native.KERNEL_N_PARAMS == N_PARAMS and _native.KERNEL_STATE_DIM == STATE_DIM

BACKEND = "native" if _native is not None else "python"


def _impl(backend):
    if backend is None:
        backend = BACKEND
    if backend == "native":
        if _native is None:
            raise RuntimeError("compiled kernels are not available")
        return _native
    return _fallback


def step_batch(state, action, noise, segs, nseg, hgrid, ngrid, params, backend=None):
    """Vectorised environment step; returns (state', terms, reward, done, timeout)."""
    n = state.shape[0]
    out_state = np.empty((n, STATE_DIM))
    out_terms = np.empty((n, N_TERMS))
    out_reward = np.empty(n)
    out_done = np.empty(n, dtype=np.int8)
    out_timeout = np.empty(n, dtype=np.int8)
    _impl(backend).step_batch(
        np.ascontiguousarray(state, dtype=np.float64), np.ascontiguousarray(action, dtype=np.float64),
        np.ascontiguousarray(noise, dtype=np.float64), np.ascontiguousarray(segs, dtype=np.float64),
        np.ascontiguousarray(nseg, dtype=np.int64), np.ascontiguousarray(hgrid, dtype=np.float64),
        np.ascontiguousarray(ngrid, dtype=np.int64), np.ascontiguousarray(params, dtype=np.float64),
        out_state, out_terms, out_reward, out_done, out_timeout)
    return out_state, out_terms, out_reward, out_done.astype(bool), out_timeout.astype(bool)


def gae(rewards, values, dones, last_values, gamma, lam, backend=None):
    out = np.empty(np.shape(rewards))
    _impl(backend).gae(np.ascontiguousarray(rewards, dtype=np.float64),
                       np.ascontiguousarray(values, dtype=np.float64),
                       np.ascontiguousarray(dones, dtype=np.float64),
                       np.ascontiguousarray(last_values, dtype=np.float64),
                       float(gamma), float(lam), out)
    return out


__all__ = ["BACKEND", "gae", "step_batch"]
