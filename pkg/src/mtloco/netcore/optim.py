"""Adam with global-norm clipping that honours frozen parameters."""
from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, NumericError
from .params import GradSet, ParamStore


def clip_by_global_norm(grads: dict, names, clip_norm: float):
    """Return (scaled grads for ``names``, pre-clip norm)."""
    total = 0.0
    for n in names:
        g = grads[n]
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    scale = 1.0 if clip_norm is None or norm <= clip_norm else clip_norm / norm
    if scale == 1.0:
        return {n: grads[n] for n in names}, norm
    return {n: grads[n] * scale for n in names}, norm


class Adam:
    def __init__(self, store: ParamStore, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ArgumentError("learning rate must be positive")
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(t.data) for n, t in store.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in store.items()}

    def sync(self):
        """Add moment slots for parameters created after construction (expert extension)."""
        for n, t in self.store.items():
            if n not in self.m:
                self.m[n] = np.zeros_like(t.data)
                self.v[n] = np.zeros_like(t.data)

    def step(self, grads: GradSet | dict, clip_norm: float | None = None, lr: float | None = None):
        """One clipped Adam update.  Returns the pre-clip global gradient norm."""
        names = self.store.names(trainable_only=True)
        for n in names:
            g = grads[n]
            if g.shape != self.store[n].data.shape:
                raise ArgumentError(f"gradient shape {g.shape} != parameter shape for {n}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {n}; step aborted")
        clipped, norm = clip_by_global_norm(grads, names, clip_norm)
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n in names:
            g = clipped[n]
            m = self.m[n] = self.b1 * self.m[n] + (1.0 - self.b1) * g
            v = self.v[n] = self.b2 * self.v[n] + (1.0 - self.b2) * g * g
            p = self.store[n]
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state_dict(self):
        return {"t": self.t, "lr": self.lr, "m": self.m, "v": self.v}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.m = {k: np.array(v, dtype=np.float64) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64) for k, v in state["v"].items()}


def optimizer_step(store: ParamStore, grads, lr: float, clip_norm: float, optimizer: Adam | None = None):
    """Functional entry point: clip, then apply one Adam update to ``store`` in place."""
    opt = optimizer if optimizer is not None else Adam(store, lr=lr)
    opt.step(grads, clip_norm=clip_norm, lr=lr)
    return store
