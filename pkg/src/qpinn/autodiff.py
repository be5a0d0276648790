"""Exact derivatives for PINN training.

Two cooperating pieces live here:

* :class:`Tape` / :class:`Node` -- reverse-mode recording over numpy arrays.
  Trainable parameters are registered on a tape and :meth:`Tape.backward`
  returns the flat gradient of a scalar loss with respect to all of them.
* :class:`DiffScalar` -- a batched forward-mode number carrying the value,
  the spatial gradient and the diagonal of the spatial Hessian. Its three
  payloads may be plain arrays or tape nodes, so spatial derivatives ride
  through the forward pass while the tape records every operation on them.

Only the pure second derivatives are tracked; the Laplacian is all the
momentum equation needs.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Node",
    "DiffScalar",
    "seed_spatial",
    "backward",
    "value_of",
    "exp",
    "sin",
    "cos",
    "tanh",
    "sigmoid",
    "silu",
    "square",
    "reciprocal",
    "concatenate",
    "take_last",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Linear record of array operations, replayed backward for gradients."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: list[Node] = []

    def reset(self) -> None:
        self.nodes.clear()
        self.params.clear()

    def param(self, value) -> "Node":
        """Register a trainable leaf. Gradients come back in registration order."""
        node = self._record(np.array(value, dtype=np.float64), (), ())
        self.params.append(node)
        return node

    def _record(self, value, parents, vjps) -> "Node":
        node = Node(self, value, parents, vjps, len(self.nodes))
        self.nodes.append(node)
        return node

    def backward(self, loss: "Node") -> np.ndarray:
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ValueError("loss node is not recorded on this tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        adj: list = [None] * (loss.index + 1)
        adj[loss.index] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.index + 1]):
            g = adj[node.index]
            if g is None:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                prev = adj[parent.index]
                adj[parent.index] = contrib if prev is None else prev + contrib
        out = []
        for p in self.params:
            g = adj[p.index] if p.index < len(adj) else None
            out.append(np.zeros(p.value.size) if g is None else np.ravel(g))
        return np.concatenate(out) if out else np.zeros(0)


def backward(tape: Tape, loss: "Node") -> np.ndarray:
    """dLoss/dtheta for every parameter registered on ``tape``."""
    return tape.backward(loss)


def value_of(x):
    """Strip tape and derivative payloads, returning a plain array."""
    if isinstance(x, DiffScalar):
        x = x.value
    if isinstance(x, Node):
        return x.value
    return np.asarray(x)


def _binary(a, b, fn, vjp_a, vjp_b):
    a_is, b_is = isinstance(a, Node), isinstance(b, Node)
    tape = a.tape if a_is else b.tape
    if a_is and b_is and a.tape is not b.tape:
        raise ValueError("operands live on different tapes")
    av = a.value if a_is else np.asarray(a, dtype=np.float64)
    bv = b.value if b_is else np.asarray(b, dtype=np.float64)
    out = fn(av, bv)
    parents, vjps = [], []
    if a_is:
        parents.append(a)
        vjps.append(lambda g: _unbroadcast(vjp_a(g, av, bv, out), av.shape))
    if b_is:
        parents.append(b)
        vjps.append(lambda g: _unbroadcast(vjp_b(g, av, bv, out), bv.shape))
    return tape._record(out, tuple(parents), tuple(vjps))


def _unary(x: "Node", out, vjp: Callable) -> "Node":
    return x.tape._record(out, (x,), (vjp,))


def _matmul_vjp_a(g, a, b, out):
    return g @ b.T


def _matmul_vjp_b(g, a, b, out):
    k, m = b.shape
    return a.reshape(-1, k).T @ g.reshape(-1, m)


class Node:
    """An array value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "value", "parents", "vjps", "index")
    __array_ufunc__ = None  # make ndarray <op> Node defer to Node

    def __init__(self, tape, value, parents, vjps, index):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"

    def __add__(self, other):
        if isinstance(other, DiffScalar):
            return NotImplemented
        return _binary(self, other, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DiffScalar):
            return NotImplemented
        return _binary(self, other, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)

    def __rsub__(self, other):
        return _binary(other, self, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)

    def __mul__(self, other):
        if isinstance(other, DiffScalar):
            return NotImplemented
        return _binary(self, other, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DiffScalar):
            return NotImplemented
        return _binary(
            self, other, np.divide, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b
        )

    def __rtruediv__(self, other):
        return _binary(
            other, self, np.divide, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b
        )

    def __neg__(self):
        return _unary(self, -self.value, lambda g: -g)

    def __matmul__(self, other):
        if np.ndim(value_of(other)) != 2:
            raise ValueError("right matmul operand must be 2-D")
        return _binary(self, other, np.matmul, _matmul_vjp_a, _matmul_vjp_b)

    def __rmatmul__(self, other):
        if self.ndim != 2:
            raise ValueError("right matmul operand must be 2-D")
        return _binary(other, self, np.matmul, _matmul_vjp_a, _matmul_vjp_b)

    def __getitem__(self, key):
        shape = self.value.shape

        basic = all(
            k is None or k is Ellipsis or isinstance(k, (int, np.integer, slice))
            for k in (key if isinstance(key, tuple) else (key,))
        )

        def vjp(g):
            z = np.zeros(shape)
            if basic:
                z[key] = g
            else:
                np.add.at(z, key, g)
            return z

        return _unary(self, self.value[key], vjp)

    @property
    def T(self):
        return _unary(self, self.value.T, lambda g: g.T)

    def reshape(self, *shape):
        old = self.value.shape
        return _unary(self, self.value.reshape(*shape), lambda g: g.reshape(old))

    def sum(self, axis=None, keepdims=False):
        shape = self.value.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return _unary(self, self.value.sum(axis=axis, keepdims=keepdims), vjp)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)


class DiffScalar:
    """Batched value with spatial gradient and Hessian diagonal.

    ``value`` has some shape ``S``; ``grad`` and ``hess`` have shape ``(3,) + S``
    where the leading axis is the spatial direction (x, y, z). Payloads are
    numpy arrays or :class:`Node` objects. Any operand that is not a
    DiffScalar is treated as spatially constant.
    """

    __slots__ = ("value", "grad", "hess")
    __array_ufunc__ = None

    def __init__(self, value, grad, hess):
        self.value = value
        self.grad = grad
        self.hess = hess

    @classmethod
    def constant(cls, value):
        v = np.asarray(value, dtype=np.float64) if not isinstance(value, Node) else value
        z = np.zeros((3,) + tuple(v.shape))
        return cls(v, z, z)

    @property
    def shape(self):
        return value_of(self.value).shape

    def __repr__(self):
        return f"DiffScalar(shape={self.shape})"

    def _chain(self, f, df, d2f) -> "DiffScalar":
        # f, df, d2f already evaluated at self.value
        g = self.grad
        return DiffScalar(f, df * g, d2f * (g * g) + df * self.hess)

    def __add__(self, other):
        if isinstance(other, DiffScalar):
            return DiffScalar(self.value + other.value, self.grad + other.grad, self.hess + other.hess)
        return DiffScalar(self.value + other, self.grad, self.hess)

    __radd__ = __add__

    def __neg__(self):
        return DiffScalar(-self.value, -self.grad, -self.hess)

    def __sub__(self, other):
        if isinstance(other, DiffScalar):
            return DiffScalar(self.value - other.value, self.grad - other.grad, self.hess - other.hess)
        return DiffScalar(self.value - other, self.grad, self.hess)

    def __rsub__(self, other):
        return DiffScalar(other - self.value, -self.grad, -self.hess)

    def __mul__(self, other):
        if isinstance(other, DiffScalar):
            a, b = self, other
            return DiffScalar(
                a.value * b.value,
                a.grad * b.value + a.value * b.grad,
                a.hess * b.value + 2.0 * (a.grad * b.grad) + a.value * b.hess,
            )
        return DiffScalar(self.value * other, self.grad * other, self.hess * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DiffScalar):
            return self * reciprocal(other)
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __matmul__(self, other):
        # spatially constant right operand
        return DiffScalar(self.value @ other, self.grad @ other, self.hess @ other)

    def __getitem__(self, key):
        key = key if isinstance(key, tuple) else (key,)
        dkey = (slice(None),) + key
        return DiffScalar(self.value[key], self.grad[dkey], self.hess[dkey])


def seed_spatial(point) -> DiffScalar:
    """Seed coordinates for forward-mode differentiation.

    ``point`` is ``(3,)`` or ``(N, 3)``; component i gets unit gradient e_i and
    zero second derivatives.
    """
    p = np.asarray(point, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite coordinate in seed_spatial")
    grad = np.zeros((3,) + p.shape)
    for i in range(3):
        grad[i, ..., i] = 1.0
    return DiffScalar(p.copy(), grad, np.zeros((3,) + p.shape))


# -- elementwise primitives ---------------------------------------------------
# Each accepts arrays, Nodes or DiffScalars.


def _np_or_node(fn_np, vjp_factory):
    def apply(x):
        if isinstance(x, Node):
            out = fn_np(x.value)
            return _unary(x, out, vjp_factory(x.value, out))
        return fn_np(np.asarray(x, dtype=np.float64))

    return apply


_exp = _np_or_node(np.exp, lambda x, o: lambda g: g * o)
_sin = _np_or_node(np.sin, lambda x, o: lambda g: g * np.cos(x))
_cos = _np_or_node(np.cos, lambda x, o: lambda g: -g * np.sin(x))
_tanh = _np_or_node(np.tanh, lambda x, o: lambda g: g * (1.0 - o * o))


def _np_sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_sigmoid = _np_or_node(_np_sigmoid, lambda x, o: lambda g: g * o * (1.0 - o))


def exp(x):
    if isinstance(x, DiffScalar):
        e = _exp(x.value)
        return x._chain(e, e, e)
    return _exp(x)


def sin(x):
    if isinstance(x, DiffScalar):
        s, c = _sin(x.value), _cos(x.value)
        return x._chain(s, c, -s)
    return _sin(x)


def cos(x):
    if isinstance(x, DiffScalar):
        s, c = _sin(x.value), _cos(x.value)
        return x._chain(c, -s, -c)
    return _cos(x)


def tanh(x):
    if isinstance(x, DiffScalar):
        t = _tanh(x.value)
        d = 1.0 - t * t
        return x._chain(t, d, -2.0 * t * d)
    return _tanh(x)


def sigmoid(x):
    if isinstance(x, DiffScalar):
        s = _sigmoid(x.value)
        d = s * (1.0 - s)
        return x._chain(s, d, d * (1.0 - 2.0 * s))
    return _sigmoid(x)


def silu(x):
    """x * sigmoid(x)."""
    if isinstance(x, DiffScalar):
        u = x.value
        s = _sigmoid(u)
        one_minus = 1.0 - s
        d1 = s + u * s * one_minus
        d2 = s * one_minus * (2.0 + u * (1.0 - 2.0 * s))
        return x._chain(u * s, d1, d2)
    return x * _sigmoid(x)


def square(x):
    return x * x


def reciprocal(x):
    if isinstance(x, DiffScalar):
        r = 1.0 / x.value
        r2 = r * r
        return x._chain(r, -r2, 2.0 * r2 * r)
    return 1.0 / x


def concatenate(parts: Sequence, axis: int = -1):
    """Concatenate arrays, Nodes or DiffScalars along a value axis."""
    if any(isinstance(p, DiffScalar) for p in parts):
        parts = [p if isinstance(p, DiffScalar) else DiffScalar.constant(p) for p in parts]
        daxis = axis if axis < 0 else axis + 1
        return DiffScalar(
            concatenate([p.value for p in parts], axis),
            concatenate([p.grad for p in parts], daxis),
            concatenate([p.hess for p in parts], daxis),
        )
    nodes = [p for p in parts if isinstance(p, Node)]
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not nodes:
        return out
    tape = nodes[0].tape
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    parents, vjps = [], []
    for i, p in enumerate(parts):
        if isinstance(p, Node):
            parents.append(p)
            vjps.append(lambda g, i=i: np.split(g, bounds, axis=axis)[i])
    return tape._record(out, tuple(parents), tuple(vjps))


def take_last(x, idx):
    """``x[..., idx]`` for a duplicate-free integer index."""
    idx = np.asarray(idx, dtype=np.intp)
    if isinstance(x, DiffScalar):
        return DiffScalar(take_last(x.value, idx), take_last(x.grad, idx), take_last(x.hess, idx))
    if not isinstance(x, Node):
        return np.asarray(x)[..., idx]
    shape = x.value.shape

    def vjp(g):
        z = np.zeros(shape)
        z[..., idx] = g
        return z

    return _unary(x, x.value[..., idx], vjp)
