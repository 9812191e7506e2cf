"""Mixture-of-experts heads sharing one softmax gating network.

Experts and gating output columns are stored as separate arrays per expert so
that individual experts can be frozen, masked or appended without touching
the others.  At evaluation time the per-expert weights are stacked and run as
one batched matmul.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ArgumentError, ConfigurationError
from .netcore import tensor as T
from .netcore.layers import ACTIVATIONS, Dense, uniform_init
from .netcore.params import ParamStore
from .netcore.tensor import Tensor


@dataclass
class GatingOverride:
    """Manual per-expert multiplier and mask applied on top of the gating scores."""

    w: np.ndarray
    mask: np.ndarray
    renormalize: bool = False

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).ravel()
        self.mask = np.asarray(self.mask, dtype=bool).ravel()
        if self.w.shape != self.mask.shape:
            raise ArgumentError("override weight and mask lengths differ")
        if not np.all(np.isfinite(self.w)):
            raise ArgumentError("override weights must be finite")
        if np.any(self.w < 0):
            raise ArgumentError("override weights must be non-negative")
        if not self.mask.any():
            raise ArgumentError("override masks every expert")

    @property
    def n(self):
        return self.w.size

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n), np.ones(n, dtype=bool))

    @classmethod
    def select(cls, n, weights: dict[int, float], renormalize=False):
        """Keep only the listed experts, each scaled by its weight."""
        w = np.zeros(n)
        mask = np.zeros(n, dtype=bool)
        for k, v in weights.items():
            w[k] = v
            mask[k] = True
        return cls(w, mask, renormalize)

    def apply(self, g: np.ndarray) -> np.ndarray:
        if g.shape[-1] != self.n:
            raise ConfigurationError(f"override has {self.n} experts, gating has {g.shape[-1]}")
        out = np.where(self.mask, self.w * g, 0.0)
        if self.renormalize:
            out = out / np.sum(out, axis=-1, keepdims=True)
        return out

    def to_dict(self):
        return {"weights": self.w.tolist(), "mask": self.mask.tolist(), "renormalize": self.renormalize}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["weights"], d.get("mask", [True] * len(d["weights"])), bool(d.get("renormalize", False)))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed override spec: {exc}") from exc


def load_override(path) -> GatingOverride:
    with open(path) as fh:
        return GatingOverride.from_dict(yaml.safe_load(fh))


def save_override(ov: GatingOverride, path):
    Path(path).write_text(yaml.safe_dump(ov.to_dict(), sort_keys=False))


class GatingNetwork:
    """MLP from the recurrent state to N softmax scores."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, hidden: list[int], n_experts: int,
                 rng=None, activation="elu", out_gain=1.0, _build=True):
        if n_experts < 1:
            raise ConfigurationError("need at least one expert")
        self.store, self.name = store, name
        self.in_dim, self.hidden_dims, self.n = in_dim, list(hidden), n_experts
        self.activation = activation
        self.out_gain = out_gain
        self.feat_dim = self.hidden_dims[-1] if self.hidden_dims else in_dim
        self.hidden = []
        dims = [in_dim, *self.hidden_dims]
        for k in range(len(dims) - 1):
            if _build:
                self.hidden.append(Dense(store, f"{name}.h{k}", dims[k], dims[k + 1], activation, rng))
            else:
                self.hidden.append(_bind_dense(store, f"{name}.h{k}", dims[k], dims[k + 1], activation))
        if _build:
            for j in range(n_experts):
                self._add_column(j, rng)

    def _add_column(self, j, rng):
        w = np.zeros(self.feat_dim) if rng is None else uniform_init(rng, self.feat_dim, 1, self.out_gain)[:, 0]
        self.store.add(f"{self.name}.out{j}.w", w)
        self.store.add(f"{self.name}.out{j}.b", np.zeros(1))

    def column_names(self, j):
        return [f"{self.name}.out{j}.w", f"{self.name}.out{j}.b"]

    def hidden_names(self):
        return [n for layer in self.hidden for n in (f"{layer.name}.W", f"{layer.name}.b")]

    def logits(self, h: Tensor) -> Tensor:
        h = T.as_tensor(h)
        if h.shape[-1] != self.in_dim:
            raise ConfigurationError(f"gating input width {h.shape[-1]} != {self.in_dim}")
        x = h
        for layer in self.hidden:
            x = layer(x)
        W = T.stack([self.store[f"{self.name}.out{j}.w"] for j in range(self.n)], axis=1)
        b = T.concat([self.store[f"{self.name}.out{j}.b"] for j in range(self.n)], axis=0)
        return T.matmul(x, W) + b

    def __call__(self, h):
        return gating_scores(self, h)


def _bind_dense(store, name, in_dim, out_dim, activation):
    layer = Dense.__new__(Dense)
    layer.name, layer.in_dim, layer.out_dim = name, in_dim, out_dim
    layer.act = ACTIVATIONS[activation]
    layer.activation = activation
    layer.store = store
    layer.W, layer.b = store[f"{name}.W"], store[f"{name}.b"]
    return layer


class MoEHead:
    """N experts with identical MLP shape; output is the gate-weighted sum."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, hidden: list[int], out_dim: int,
                 n_experts: int, rng=None, activation="elu", out_gain=1.0, _build=True):
        if n_experts < 1:
            raise ConfigurationError("need at least one expert")
        self.store, self.name = store, name
        self.in_dim, self.hidden, self.out_dim, self.n = in_dim, list(hidden), out_dim, n_experts
        self.activation = activation
        self.out_gain = out_gain
        self.dims = [in_dim, *self.hidden, out_dim]
        if _build:
            for j in range(n_experts):
                self._add_expert(j, rng)

    def _add_expert(self, j, rng):
        for k in range(len(self.dims) - 1):
            last = k == len(self.dims) - 2
            fi, fo = self.dims[k], self.dims[k + 1]
            w = np.zeros((fi, fo)) if rng is None else uniform_init(rng, fi, fo, self.out_gain if last else 1.0)
            self.store.add(f"{self.name}.e{j}.l{k}.W", w)
            self.store.add(f"{self.name}.e{j}.l{k}.b", np.zeros(fo))

    def expert_names(self, j):
        return [f"{self.name}.e{j}.l{k}.{p}" for k in range(len(self.dims) - 1) for p in ("W", "b")]

    def expert_outputs(self, h: Tensor) -> Tensor:
        """All expert outputs at once, shape ``(N, batch, out_dim)``."""
        h = T.as_tensor(h)
        if h.shape[-1] != self.in_dim:
            raise ConfigurationError(f"expert input width {h.shape[-1]} != {self.in_dim}")
        act = ACTIVATIONS[self.activation]
        x = h
        nl = len(self.dims) - 1
        for k in range(nl):
            W = T.stack([self.store[f"{self.name}.e{j}.l{k}.W"] for j in range(self.n)], axis=0)
            b = T.stack([self.store[f"{self.name}.e{j}.l{k}.b"] for j in range(self.n)], axis=0)
            x = T.matmul(x, W) + T.reshape(b, (self.n, 1, self.dims[k + 1]))
            if k < nl - 1:
                x = act(x)
        return x

    def expert_forward(self, j: int, h) -> Tensor:
        """Single expert evaluated on its own (used as an oracle and for inspection)."""
        act = ACTIVATIONS[self.activation]
        x = T.as_tensor(h)
        nl = len(self.dims) - 1
        for k in range(nl):
            x = T.matmul(x, self.store[f"{self.name}.e{j}.l{k}.W"]) + self.store[f"{self.name}.e{j}.l{k}.b"]
            if k < nl - 1:
                x = act(x)
        return x

    def __call__(self, g, h, override=None):
        return moe_forward(self, g, h, override)


def gating_scores(gating: GatingNetwork, h) -> Tensor:
    return T.softmax(gating.logits(h), axis=-1)


def applied_weights(g, override: GatingOverride | None):
    """Weights actually used to mix experts: the gate, or the gate after an override."""
    if override is None:
        return g
    g = T.as_tensor(g)
    if g.shape[-1] != override.n:
        raise ConfigurationError(f"override has {override.n} experts, gating has {g.shape[-1]}")
    w = T.mul(g, np.where(override.mask, override.w, 0.0))
    if override.renormalize:
        w = T.div(w, T.sum(w, axis=-1, keepdims=True))
    return w


def mix(expert_out: Tensor, weights) -> Tensor:
    """``sum_j weights[:, j] * expert_out[j]``; expert_out is ``(N, B, D)``, weights ``(B, N)``."""
    weights = T.as_tensor(weights)
    wt = T.reshape(_transpose_bn(weights), (weights.shape[-1], weights.shape[0], 1))
    return T.sum(T.mul(wt, expert_out), axis=0)


def _transpose_bn(w: Tensor) -> Tensor:
    wd = w.data
    return T._make(wd.T.copy(), (w,), lambda g: (g.T.copy(),))


def moe_forward(head: MoEHead, g, h, override: GatingOverride | None = None) -> Tensor:
    g = T.as_tensor(g)
    if g.ndim == 1:
        g = T.reshape(g, (1, g.shape[0]))
    h = T.as_tensor(h)
    if h.ndim == 1:
        h = T.reshape(h, (1, h.shape[0]))
    if g.shape[-1] != head.n:
        raise ConfigurationError(f"gating has {g.shape[-1]} scores, head has {head.n} experts")
    return mix(head.expert_outputs(h), applied_weights(g, override))


def shared_gating_eval(gating: GatingNetwork, actor: MoEHead, critic: MoEHead, h, h_critic=None,
                       override: GatingOverride | None = None, hook=None):
    """Actor output, critic value and the single gate vector both consumed.

    ``h_critic`` lets the critic read its own recurrent state while sharing
    the gate computed from ``h``.  ``hook(role, g)`` sees the gate object each
    head receives.
    """
    if actor.n != gating.n or critic.n != gating.n:
        raise ConfigurationError(f"expert counts differ: gating {gating.n}, actor {actor.n}, critic {critic.n}")
    g = gating_scores(gating, h)
    if hook is not None:
        hook("actor", g)
    a = moe_forward(actor, g, h, override)
    if hook is not None:
        hook("critic", g)
    v = moe_forward(critic, g, h if h_critic is None else h_critic, override)
    return a, v, g


def extend_experts(head: MoEHead, gating: GatingNetwork, k_new: int, rng, extra_heads=(),
                   new_bias: float = -3.0):
    """Append ``k_new`` freshly initialised experts and gating columns.

    New gating columns start with zero weights and bias ``new_bias`` so the
    extended policy begins close to the base one.  Existing arrays are left
    untouched in the store, so they stay bit-exact.  Returns new descriptors
    ``(head', gating', *extra_heads')``.
    """
    if k_new < 1:
        raise ArgumentError("k_new must be >= 1")
    if head.store is not gating.store:
        raise ConfigurationError("head and gating must share a parameter store")
    new_gating = GatingNetwork(gating.store, gating.name, gating.in_dim, gating.hidden_dims,
                               gating.n + k_new, activation=gating.activation,
                               out_gain=gating.out_gain, _build=False)
    for j in range(gating.n, gating.n + k_new):
        new_gating._add_column(j, rng)
        gating.store[f"{gating.name}.out{j}.w"].data[:] = 0.0
        gating.store[f"{gating.name}.out{j}.b"].data[:] = new_bias
    out = [new_gating]
    for hd in (head, *extra_heads):
        nh = MoEHead(hd.store, hd.name, hd.in_dim, hd.hidden, hd.out_dim, hd.n + k_new,
                     activation=hd.activation, out_gain=hd.out_gain, _build=False)
        for j in range(hd.n, hd.n + k_new):
            nh._add_expert(j, rng)
        out.append(nh)
    return (out[1], out[0], *out[2:])


def freeze_experts(store: ParamStore, head: MoEHead, indices) -> ParamStore:
    names = []
    for j in indices:
        if not 0 <= j < head.n:
            raise ArgumentError(f"expert index {j} out of range 0..{head.n - 1}")
        names.extend(head.expert_names(j))
    store.set_trainable(names, False)
    return store


def gating_param_names(gating: GatingNetwork, columns=None):
    cols = range(gating.n) if columns is None else columns
    out = list(gating.hidden_names())
    for j in cols:
        out.extend(gating.column_names(j))
    return out


@dataclass
class GateTrace:
    """Collects the gate each head consumed during one evaluation."""

    seen: list = field(default_factory=list)

    def __call__(self, role, g):
        self.seen.append((role, g))
