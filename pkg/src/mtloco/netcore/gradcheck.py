"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, NumericError
from . import tensor as T
from .params import ParamStore


def finite_diff_check(loss_fn, store: ParamStore, eps: float = 1e-6, names=None,
                      max_coords: int | None = None, rng=None) -> float:
    """Max over coordinates of ``|analytic - numeric| / max(1, |analytic|)``.

    ``loss_fn(store)`` must build a scalar Tensor from the store's tensors.
    ``max_coords`` samples a random subset of coordinates for large nets.
    """
    if not (0.0 < eps <= 1e-2):
        raise ArgumentError(f"eps must lie in (0, 1e-2], got {eps}")
    names = store.names() if names is None else list(names)
    store.zero_grad()
    loss = loss_fn(store)
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    T.backward(loss)
    analytic = store.grads()

    coords = [(n, i) for n in names for i in range(store[n].data.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    worst = 0.0
    with T.no_grad():
        for n, i in coords:
            arr = store[n].data
            flat = arr.reshape(-1)
            orig = flat[i]
            flat[i] = orig + eps
            lp = float(loss_fn(store).data)
            flat[i] = orig - eps
            lm = float(loss_fn(store).data)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("loss is not finite under perturbation")
            num = (lp - lm) / (2.0 * eps)
            ana = float(analytic[n].reshape(-1)[i])
            worst = max(worst, abs(ana - num) / max(1.0, abs(ana)))
    return worst
