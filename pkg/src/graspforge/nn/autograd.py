"""Reverse-mode autodiff over float64 numpy arrays.

Every op returns a new Tensor that remembers its parents and a closure that
pushes the output gradient back to them. `backward` walks the graph once in
reverse topological order. Inside `no_grad()` no closures are recorded, which
is what the samplers and rollouts use.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

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


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def transpose(self, *axes):
        return transpose(self, axes)

    def reshape(self, *shape):
        return reshape(self, shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, op, backward) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, op=op, parents=parents if needs else ())
    if needs:
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), "add", bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), "mul", bw)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), "neg", lambda g: _accum(a, -g))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), "relu", lambda g: _accum(a, g * mask))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), "tanh", lambda g: _accum(a, g * (1.0 - y * y)))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(y, (a,), "sigmoid", lambda g: _accum(a, g * y * (1.0 - y)))


def mish(a: Tensor) -> Tensor:
    x = a.data
    th = np.tanh(np.logaddexp(0.0, x))
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))

    def bw(g):
        _accum(a, g * (th + x * (1.0 - th * th) * sig))

    return _node(x * th, (a,), "mish", bw)


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), "square", lambda g: _accum(a, 2.0 * g * a.data))


# --------------------------------------------------------------------------
# reductions and shape ops


def tsum(a: Tensor) -> Tensor:
    return _node(np.sum(a.data), (a,), "sum", lambda g: _accum(a, np.broadcast_to(g, a.shape)))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _node(np.mean(a.data), (a,), "mean", lambda g: _accum(a, np.broadcast_to(g / n, a.shape)))


def reshape(a: Tensor, shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return _node(a.data.reshape(shape), (a,), "reshape", lambda g: _accum(a, g.reshape(a.shape)))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is not None and len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    axes = tuple(axes) if axes else tuple(reversed(range(a.data.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), "transpose", lambda g: _accum(a, g.transpose(inv)))


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        _accum(a, full)

    return _node(a.data[idx], (a,), "getitem", bw)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, cuts, axis=axis)):
            _accum(t, piece)

    return _node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), "concat", bw)


# --------------------------------------------------------------------------
# layers


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bw(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), "matmul", bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x (..., in) @ w (in, out) + b (out,)."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """x (B, C, L), w (O, C, K) -> (B, O, L_out); zero padding on both sides."""
    x, w = _wrap(x), _wrap(w)
    B, C, L = x.shape
    O, C2, K = w.shape
    if C != C2:
        raise ValueError(f"conv1d: input has {C} channels, kernel expects {C2}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, K, axis=2)[:, :, ::stride]  # (B, C, Lo, K)
    Lo = win.shape[2]
    y = np.tensordot(win, w.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)  # (B, O, Lo)

    def bw(g):
        if w.requires_grad:
            _accum(w, np.tensordot(g, win, axes=([0, 2], [0, 2])))
        if x.requires_grad:
            dwin = np.tensordot(g, w.data, axes=([1], [0]))  # (B, Lo, C, K)
            dxp = np.zeros_like(xp)
            span = stride * (Lo - 1) + 1
            for k in range(K):
                dxp[:, :, k : k + span : stride] += dwin[:, :, :, k].transpose(0, 2, 1)
            _accum(x, dxp[:, :, padding : padding + L] if padding else dxp)

    out = _node(np.ascontiguousarray(y), (x, w), "conv1d", bw)
    if b is not None:
        out = add(out, reshape(_wrap(b), (1, O, 1)))
    return out


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """x (B, C, L); statistics per (sample, group of C // groups channels)."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    B, C, L = x.shape
    if C % groups:
        raise ValueError(f"group_norm: {C} channels not divisible into {groups} groups")
    xg = x.data.reshape(B, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(B, C, L)
    y = xhat * gamma.data[None, :, None] + beta.data[None, :, None]
    n = xg.shape[2]

    def bw(g):
        _accum(gamma, np.sum(g * xhat, axis=(0, 2)))
        _accum(beta, np.sum(g, axis=(0, 2)))
        if x.requires_grad:
            dxh = (g * gamma.data[None, :, None]).reshape(B, groups, n)
            xh = xhat.reshape(B, groups, n)
            dx = inv / n * (n * dxh - dxh.sum(axis=2, keepdims=True) - xh * (dxh * xh).sum(axis=2, keepdims=True))
            _accum(x, dx.reshape(B, C, L))

    return _node(y, (x, gamma, beta), "group_norm", bw)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """(B, C, L) -> (B, C, factor * L) by repetition."""
    B, C, L = x.shape

    def bw(g):
        _accum(x, g.reshape(B, C, L, factor).sum(axis=3))

    return _node(np.repeat(x.data, factor, axis=2), (x,), "upsample", bw)


def sinusoidal_embedding(t, dim: int) -> Tensor:
    """Timestep features [sin(t f_i), cos(t f_i)], f_i geometric from 1 to 1e-4."""
    t = _wrap(t)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    arg = t.data.reshape(-1, 1) * freqs[None, :]
    s, c = np.sin(arg), np.cos(arg)

    def bw(g):
        gs, gc = g[:, :half], g[:, half:]
        _accum(t, ((gs * c - gc * s) * freqs[None, :]).sum(axis=1).reshape(t.shape))

    return _node(np.concatenate([s, c], axis=1), (t,), "sin_embed", bw)


def mse(pred: Tensor, target) -> Tensor:
    target = _wrap(target)
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        _accum(pred, g * 2.0 * diff / n)
        _accum(target, -g * 2.0 * diff / n)

    return _node(np.mean(diff * diff), (pred, target), "mse", bw)


# --------------------------------------------------------------------------


def backward(loss: Tensor, params: dict | None = None) -> dict:
    """Backpropagate from a scalar; returns gradients for `params` (zeros if unused)."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if params is None:
        return {}
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in params.items()
    }
