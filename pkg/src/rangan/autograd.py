"""Small dense-tensor engine with reverse-mode differentiation.

Tensors wrap contiguous float64 numpy arrays. Every op that touches a tensor
with ``requires_grad`` records its parents and a backward closure; calling
:func:`backward` on a scalar walks that graph once in reverse topological order.

Broadcasting is limited to exact shape match or scalars, except for
:func:`add_bias`, which adds a tensor matching a trailing suffix of the shape
(bias vectors, positional tables).
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from rangan import _kernels


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal constructor that skips the defensive copy
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr, dtype=np.float64)
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def _make(out: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    t = Tensor._wrap(out)
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    return t


def _accum(t: Tensor, g: np.ndarray) -> None:
    # grads are never mutated in place, so arrays may be shared between tensors
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.reshape(t.shape)
    else:
        t.grad = t.grad + g.reshape(t.shape)


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or (t.data.size == 1 and t.data.ndim <= 1)


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "add")

    def backward(g):
        _accum(a, _reduce_to(g, a))
        _accum(b, _reduce_to(g, b))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "sub")

    def backward(g):
        _accum(a, _reduce_to(g, a))
        _accum(b, _reduce_to(-g, b))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            _accum(a, _reduce_to(g * b.data, a))
        if b.requires_grad:
            _accum(b, _reduce_to(g * a.data, b))

    return _make(a.data * b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: _accum(x, g * c))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: _accum(x, g * mask))


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return _make(s, (x,), lambda g: _accum(x, g * s * (1.0 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, (x,), lambda g: _accum(x, g * (1.0 - t * t)))


def absolute(x: Tensor) -> Tensor:
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: _accum(x, g * sgn))


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: _accum(x, 2.0 * g * x.data))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b.shape`` equals a trailing suffix of ``x.shape``."""
    x, b = _as_tensor(x), _as_tensor(b)
    k = b.ndim
    if k > x.ndim or x.shape[x.ndim - k:] != b.shape:
        raise ShapeError(f"add_bias: {b.shape} is not a trailing suffix of {x.shape}")
    lead = x.ndim - k

    def backward(g):
        _accum(x, g)
        if b.requires_grad:
            _accum(b, g.sum(axis=tuple(range(lead))) if lead else g)

    return _make(x.data + b.data, (x, b), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. ``rng=None`` or ``rate == 0`` is the identity (eval mode)."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: _accum(x, g * keep))


# ------------------------------------------------------------------ structure

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: _accum(x, g.reshape(x.shape)))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _make(out, (x,), lambda g: _accum(x, g.transpose(inv)))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def total(x: Tensor) -> Tensor:
    return _make(np.asarray(x.data.sum()), (x,), lambda g: _accum(x, np.broadcast_to(g, x.shape)))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = x.size

        def backward(g):
            _accum(x, np.broadcast_to(g / n, x.shape))

        return _make(np.asarray(x.data.mean()), (x,), backward)
    axis = axis % x.ndim
    n = x.shape[axis]

    def backward_axis(g):
        _accum(x, np.broadcast_to(np.expand_dims(g, axis) / n, x.shape))

    return _make(x.data.mean(axis=axis), (x,), backward_axis)


# ---------------------------------------------------------------- linear alg.

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the last two axes.

    ``b`` may be 2-D (shared across all leading axes of ``a``) or have the same
    leading axes as ``a`` (batched product).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim == 2:
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

        def backward(g):
            g2 = g.reshape(-1, n)
            if a.requires_grad:
                _accum(a, g2 @ b.data.T)
            if b.requires_grad:
                _accum(b, a2.T @ g2)

        return _make(out, (a, b), backward)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch axes differ between {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward_batched(g):
        if a.requires_grad:
            _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(out, (a, b), backward_batched)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` is 2-D, ``b`` 1-D."""
    if b is None:
        return matmul(x, w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: x {x.shape}, w {w.shape}, b {b.shape}")
    k, n = w.shape
    x2 = x.data.reshape(-1, k)
    out = x2 @ w.data
    out += b.data
    out = out.reshape(x.shape[:-1] + (n,))

    def backward(g):
        g2 = g.reshape(-1, n)
        if x.requires_grad:
            _accum(x, g2 @ w.data.T)
        if w.requires_grad:
            _accum(w, x2.T @ g2)
        if b.requires_grad:
            _accum(b, g2.sum(axis=0))

    return _make(out, (x, w, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    axis = axis % x.ndim
    last = axis == x.ndim - 1
    xd = x.data if last else np.moveaxis(x.data, axis, -1)
    s = _kernels.softmax_last(xd)

    def backward(g):
        gd = g if last else np.moveaxis(g, axis, -1)
        gx = _kernels.softmax_last_grad(s, gd)
        _accum(x, gx if last else np.moveaxis(gx, -1, axis))

    return _make(s if last else np.moveaxis(s, -1, axis), (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma {gamma.shape} / beta {beta.shape} vs last axis {d}")
    out, xhat, inv = _kernels.layer_norm(x.data, gamma.data, beta.data, eps)

    def backward(g):
        lead = tuple(range(x.ndim - 1))
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=lead))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=lead))
        if x.requires_grad:
            _accum(x, _kernels.layer_norm_grad(g, xhat, inv, gamma.data))

    return _make(out, (x, gamma, beta), backward)


# --------------------------------------------------------------------- losses

BCE_EPS = 1e-7


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [eps, 1-eps]."""
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"bce_loss: pred {pred.shape} vs target {target.shape}")
    p_raw = pred.data
    p = np.clip(p_raw, BCE_EPS, 1.0 - BCE_EPS)
    t = target.data
    n = p.size
    loss = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()
    inside = (p_raw > BCE_EPS) & (p_raw < 1.0 - BCE_EPS)

    def backward(g):
        _accum(pred, g * inside * (p - t) / (p * (1.0 - p)) / n)

    return _make(np.asarray(loss), (pred,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    return mean(square(sub(pred, _as_tensor(target))))


# ------------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every grad-requiring leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate gradients are freed.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones(loss.shape) if loss.grad is None else loss.grad + 1.0
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        # only leaves keep their gradients
        node.grad = None


# ------------------------------------------------------------------ optimizer

class Adam:
    """Bias-corrected adaptive-moment optimizer over a fixed parameter list."""

    def __init__(self, params: Iterable[Tensor], lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            if p.grad is None:
                g = np.zeros_like(p.data)
            else:
                g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params: Sequence[Tensor], state: Adam) -> None:
    if list(params) != state.params:
        raise ValueError("optimizer state was built for a different parameter list")
    state.step()


# ----------------------------------------------------------------------- init

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones(shape, name: str | None = None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)
