"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients.  ``backward`` walks the graph
in reverse topological order.  Inside :func:`no_grad` no graph is recorded,
which is what rollout collection uses.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from ..errors import ArgumentError, ConfigurationError, NumericError, StateError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")
    __array_ufunc__ = None  # make ``ndarray op Tensor`` defer to the Tensor's reflected operator

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def backward(self, seed=None):
        backward(self, seed)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(out: Tensor, seed=None):
    """Accumulate d(out)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if not isinstance(out, Tensor) or (out._backward is None and not out.requires_grad):
        raise StateError("backward called on a value with no recorded forward pass")
    if seed is None:
        if out.data.size != 1:
            raise ArgumentError("a seed is required for non-scalar outputs")
        seed = np.ones_like(out.data)
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != out.data.shape:
        raise ArgumentError(f"seed shape {seed.shape} != output shape {out.data.shape}")

    order, seen = [], set()
    stack = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(out): seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = pg if k not in grads else grads[k] + pg


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _make(out, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def elu(a):
    a = as_tensor(a)
    ad = a.data
    pos = ad > 0
    em1 = np.expm1(np.minimum(ad, 0.0))
    out = np.where(pos, ad, em1)
    return _make(out, (a,), lambda g: (g * np.where(pos, 1.0, em1 + 1.0),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _make(np.clip(ad, lo, hi), (a,), lambda g: (g * inside,))


def maximum(a, b):
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)
    sa, sb = a.data.shape, b.data.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g * take_a, sa), _unbroadcast(g * ~take_a, sb)))


def minimum(a, b):
    """Elementwise min; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)
    sa, sb = a.data.shape, b.data.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g * take_a, sa), _unbroadcast(g * ~take_a, sb)))


# ---------------------------------------------------------------- reductions

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.data.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """Batched matmul with numpy broadcasting over leading axes (both operands >= 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ConfigurationError("matmul operands must be at least 2-D")
    if ad.shape[-1] != bd.shape[-2]:
        raise ConfigurationError(f"matmul dimension mismatch: {ad.shape} @ {bd.shape}")

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _make(np.matmul(ad, bd), (a, b), bw)


# ---------------------------------------------------------------- shape ops

def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(np.stack([t.data for t in ts], axis=axis), tuple(ts), bw)


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def getitem(a, idx):
    a = as_tensor(a)
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g) if _needs_add_at(idx) else full.__setitem__(idx, g)
        return (full,)

    return _make(a.data[idx], (a,), bw)


def _needs_add_at(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


# ---------------------------------------------------------------- composite

def softmax(v, axis=-1):
    """Max-subtracted softmax with an analytic Jacobian-vector backward."""
    v = as_tensor(v)
    if v.data.size == 0 or v.data.shape[axis] == 0:
        raise ArgumentError("softmax of an empty vector")
    z = v.data - np.max(v.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (v,), bw)


def lstm_cell(gates, c_prev):
    """Fused LSTM nonlinearity.

    ``gates`` holds the pre-activations ``[i, f, g, o]`` concatenated on the
    last axis.  Returns ``(h, c)``.
    """
    gates, c_prev = as_tensor(gates), as_tensor(c_prev)
    gd, cp = gates.data, c_prev.data
    H = cp.shape[-1]
    if gd.shape[-1] != 4 * H:
        raise ConfigurationError(f"lstm gates width {gd.shape[-1]} != 4*{H}")
    i = 0.5 * (np.tanh(0.5 * gd[..., :H]) + 1.0)
    f = 0.5 * (np.tanh(0.5 * gd[..., H:2 * H]) + 1.0)
    gg = np.tanh(gd[..., 2 * H:3 * H])
    o = 0.5 * (np.tanh(0.5 * gd[..., 3 * H:]) + 1.0)
    c = f * cp + i * gg
    tc = np.tanh(c)
    h = o * tc

    # Both outputs share one backward: h is emitted as a node depending on an
    # internal (c) node so gradient flowing into either is handled.
    c_node = _make(c, (gates, c_prev), None)
    if c_node.requires_grad:
        def bw_c(gc):
            dgates = np.empty_like(gd)
            dgates[..., :H] = gc * gg * i * (1.0 - i)
            dgates[..., H:2 * H] = gc * cp * f * (1.0 - f)
            dgates[..., 2 * H:3 * H] = gc * i * (1.0 - gg * gg)
            dgates[..., 3 * H:] = 0.0
            return dgates, gc * f

        c_node._backward = bw_c

    def bw_h(gh):
        dgates = np.zeros_like(gd)
        dgates[..., 3 * H:] = gh * tc * o * (1.0 - o)
        return dgates, gh * o * (1.0 - tc * tc)

    h_node = _make(h, (gates, c_node), None)
    if h_node.requires_grad:
        h_node._backward = bw_h
    return h_node, c_node


def check_finite(x, what="value"):
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite {what}")


LOG_2PI = math.log(2.0 * math.pi)
