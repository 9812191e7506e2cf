"""Dense, recurrent and MLP building blocks whose weights live in a ParamStore."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, StateError
from . import tensor as T
from .params import ParamStore
from .tensor import Tensor

ACTIVATIONS = {
    "tanh": T.tanh,
    "elu": T.elu,
    "relu": T.relu,
    "linear": lambda x: x,
}


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | recurrent-memory | softmax | activation
    input_dim: int
    output_dim: int
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in ("dense", "recurrent-memory", "softmax", "activation"):
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ConfigurationError("layer dims must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.kind in ("softmax", "activation") and self.input_dim != self.output_dim:
            raise ConfigurationError(f"{self.kind} layer must preserve width")


def uniform_init(rng, fan_in, fan_out, gain=1.0):
    bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def orthogonal_init(rng, rows, cols, gain=1.0):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Dense:
    def __init__(self, store: ParamStore, name: str, in_dim: int, out_dim: int,
                 activation="linear", rng=None, gain=1.0, zero=False):
        if in_dim <= 0 or out_dim <= 0:
            raise ConfigurationError(f"{name}: dims must be positive")
        self.name, self.in_dim, self.out_dim = name, in_dim, out_dim
        self.act = ACTIVATIONS[activation]
        self.activation = activation
        w = np.zeros((in_dim, out_dim)) if zero or rng is None else uniform_init(rng, in_dim, out_dim, gain)
        self.W = store.add(f"{name}.W", w)
        self.b = store.add(f"{name}.b", np.zeros(out_dim))
        self.store = store

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ConfigurationError(f"{self.name}: input width {x.shape[-1]} != {self.in_dim}")
        return self.act(T.matmul(x, self.store[f"{self.name}.W"]) + self.store[f"{self.name}.b"])


class MLP:
    """Stack of dense layers; hidden layers use ``activation``, the last one is linear."""

    def __init__(self, store, name, in_dim, hidden, out_dim, activation="elu", rng=None,
                 out_gain=1.0):
        dims = [in_dim, *hidden, out_dim]
        self.layers = []
        for k in range(len(dims) - 1):
            last = k == len(dims) - 2
            self.layers.append(Dense(store, f"{name}.l{k}", dims[k], dims[k + 1],
                                     "linear" if last else activation, rng,
                                     gain=out_gain if last else 1.0))
        self.in_dim, self.out_dim = in_dim, out_dim

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class LSTM:
    """Canonical LSTM (gates i, f, g, o); state is the pair ``(h, c)``."""

    def __init__(self, store: ParamStore, name: str, in_dim: int, hidden: int, rng=None):
        if in_dim <= 0 or hidden <= 0:
            raise ConfigurationError(f"{name}: dims must be positive")
        self.name, self.in_dim, self.hidden = name, in_dim, hidden
        if rng is None:
            w_ih, w_hh = np.zeros((in_dim, 4 * hidden)), np.zeros((hidden, 4 * hidden))
        else:
            w_ih = uniform_init(rng, in_dim, 4 * hidden)
            w_hh = np.concatenate([orthogonal_init(rng, hidden, hidden) for _ in range(4)], axis=1)
        store.add(f"{name}.W_ih", w_ih)
        store.add(f"{name}.W_hh", w_hh)
        store.add(f"{name}.b", np.zeros(4 * hidden))
        self.store = store

    def zero_state(self, batch: int):
        return np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))

    def input_proj(self, x: Tensor) -> Tensor:
        """Input contribution to the gates; can be computed for a whole sequence at once."""
        if x.shape[-1] != self.in_dim:
            raise ConfigurationError(f"{self.name}: input width {x.shape[-1]} != {self.in_dim}")
        return T.matmul(x, self.store[f"{self.name}.W_ih"]) + self.store[f"{self.name}.b"]

    def step_proj(self, xproj: Tensor, state):
        h, c = state
        gates = xproj + T.matmul(T.as_tensor(h), self.store[f"{self.name}.W_hh"])
        return T.lstm_cell(gates, T.as_tensor(c))

    def step(self, x: Tensor, state):
        return self.step_proj(self.input_proj(x), state)


class Sequential:
    """A composed stack of :class:`LayerSpec` layers with at most one recurrent layer.

    ``forward`` records its output so ``backward`` can be called on the net
    itself with a seed for that output.
    """

    def __init__(self, specs: list[LayerSpec], rng=None, store: ParamStore | None = None,
                 name="net", identity=False):
        if not specs:
            raise ConfigurationError("empty layer stack")
        for a, b in zip(specs, specs[1:]):
            if a.output_dim != b.input_dim:
                raise ConfigurationError(f"layer width mismatch {a.output_dim} -> {b.input_dim}")
        self.specs = specs
        self.store = store if store is not None else ParamStore()
        self.layers = []
        self.recurrent = False
        for k, s in enumerate(specs):
            lname = f"{name}.{k}"
            if s.kind == "dense":
                layer = Dense(self.store, lname, s.input_dim, s.output_dim, s.activation,
                              None if identity else rng)
                if identity:
                    if s.input_dim != s.output_dim:
                        raise ConfigurationError("identity init needs a square layer")
                    self.store[f"{lname}.W"].data = np.eye(s.input_dim)
                self.layers.append(("dense", layer))
            elif s.kind == "recurrent-memory":
                if self.recurrent:
                    raise ConfigurationError("at most one recurrent layer per stack")
                self.recurrent = True
                self.layers.append(("lstm", LSTM(self.store, lname, s.input_dim, s.output_dim, rng)))
            elif s.kind == "softmax":
                self.layers.append(("softmax", None))
            else:
                self.layers.append(("act", ACTIVATIONS[s.activation]))
        self.input_dim = specs[0].input_dim
        self.output_dim = specs[-1].output_dim
        self._last = None

    def initial_state(self, batch=1):
        for kind, layer in self.layers:
            if kind == "lstm":
                return layer.zero_state(batch)
        return None

    def forward(self, x, state=None):
        x = T.as_tensor(x)
        if x.shape[-1] != self.input_dim:
            raise ConfigurationError(f"input width {x.shape[-1]} != {self.input_dim}")
        if self.recurrent and state is None:
            raise ConfigurationError("recurrent net requires a state")
        if not self.recurrent and state is not None:
            raise ConfigurationError("feed-forward net takes no state")
        new_state = None
        for kind, layer in self.layers:
            if kind == "dense":
                x = layer(x)
            elif kind == "lstm":
                h, c = layer.step(x, state)
                new_state = (h, c)
                x = h
            elif kind == "softmax":
                x = T.softmax(x)
            else:
                x = layer(x)
        self._last = x
        return x, new_state

    def __call__(self, x, state=None):
        return self.forward(x, state)

    def backward(self, seed):
        if self._last is None:
            raise StateError("backward called before forward")
        self.store.zero_grad()
        T.backward(self._last, seed)
        return self.store.grads()
