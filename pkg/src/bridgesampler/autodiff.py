"""Minimal reverse-mode differentiation over dense float64 arrays.

Values are plain numpy arrays; wrapping one in a :class:`Node` inside an
active :class:`Tape` context records every subsequent operation so that
``tape.backward(root)`` can fill in exact gradients for all requires-grad
leaves.  The module-level op functions (``add``, ``matmul``, ``exp``, ...)
dispatch on their arguments: called on plain arrays they are thin numpy
wrappers, called on at least one Node they record the local derivative on
the tape.  This lets the same model code run in a fast no-grad mode and in
a recorded mode.

Scope is deliberately small: first-order gradients of a scalar root,
single-threaded tapes, no graph rewriting.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Node",
    "Tape",
    "value_of",
    "add",
    "subtract",
    "multiply",
    "divide",
    "negative",
    "matmul",
    "reduce_sum",
    "reduce_mean",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "square",
    "sqrt",
    "softplus",
    "clip",
    "maximum",
    "concatenate",
    "reshape",
    "custom_op",
]

_TAPE_STACK: list["Tape"] = []


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _active_tape() -> "Tape":
    if not _TAPE_STACK:
        raise RuntimeError("no active Tape; wrap differentiable code in 'with Tape():'")
    return _TAPE_STACK[-1]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One record in the computation DAG.

    Holds a float64 value, a same-shaped gradient accumulator and, for
    non-leaf nodes, references to the parents together with closures that
    map the incoming adjoint to each parent's contribution.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents")

    # keep numpy from absorbing Nodes into object arrays
    __array_ufunc__ = None

    def __init__(self, value, requires_grad: bool = False, _parents=()):
        self.value = _as_array(value)
        self.grad = np.zeros_like(self.value)
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(_parents)
        _active_tape()._record(self)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return _getitem(self, key)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of Nodes; construction order is a valid topological order."""

    def __init__(self):
        self._nodes: list[Node] = []

    def _record(self, node: Node) -> None:
        self._nodes.append(node)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def leaf(self, value, requires_grad: bool = True) -> Node:
        return Node(value, requires_grad=requires_grad)

    def reset_grads(self) -> None:
        for node in self._nodes:
            node.zero_grad()

    def backward(self, root: Node) -> None:
        """Accumulate d(root)/d(node) into ``node.grad`` for every ancestor.

        Repeated calls without :meth:`reset_grads` accumulate into the
        existing gradient buffers.
        """
        if root.value.ndim != 0 and root.value.size != 1:
            raise ValueError("backward root must be scalar")
        root.grad = root.grad + np.ones_like(root.value)
        seen = False
        for node in reversed(self._nodes):
            if node is root:
                seen = True
            if not seen:
                continue
            if not node._parents:
                continue
            out_grad = node.grad
            for parent, pull in node._parents:
                parent.grad = parent.grad + pull(out_grad)


def value_of(x) -> np.ndarray:
    """Underlying array of a Node, or the input coerced to float64."""
    return x.value if isinstance(x, Node) else _as_array(x)


def _is_node(*xs) -> bool:
    return any(isinstance(x, Node) for x in xs)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else Node(_as_array(x))


# ---------------------------------------------------------------------------
# elementwise binary ops
# ---------------------------------------------------------------------------

def add(a, b):
    if not _is_node(a, b):
        return _as_array(a) + _as_array(b)
    a, b = _lift(a), _lift(b)
    out = a.value + b.value
    return Node(out, _parents=[
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ])


def subtract(a, b):
    if not _is_node(a, b):
        return _as_array(a) - _as_array(b)
    a, b = _lift(a), _lift(b)
    out = a.value - b.value
    return Node(out, _parents=[
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    ])


def multiply(a, b):
    if not _is_node(a, b):
        return _as_array(a) * _as_array(b)
    a, b = _lift(a), _lift(b)
    out = a.value * b.value
    return Node(out, _parents=[
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ])


def divide(a, b):
    if not _is_node(a, b):
        return _as_array(a) / _as_array(b)
    a, b = _lift(a), _lift(b)
    out = a.value / b.value
    return Node(out, _parents=[
        (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(-g * a.value / (b.value ** 2), b.value.shape)),
    ])


def negative(a):
    if not _is_node(a):
        return -_as_array(a)
    return Node(-a.value, _parents=[(a, lambda g: -g)])


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    if not _is_node(a, b):
        return np.maximum(_as_array(a), _as_array(b))
    a, b = _lift(a), _lift(b)
    out = np.maximum(a.value, b.value)
    take_a = a.value >= b.value
    return Node(out, _parents=[
        (a, lambda g: _unbroadcast(g * take_a, a.value.shape)),
        (b, lambda g: _unbroadcast(g * (~take_a), b.value.shape)),
    ])


# ---------------------------------------------------------------------------
# matmul / reductions / shape ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    if not _is_node(a, b):
        return _as_array(a) @ _as_array(b)
    a, b = _lift(a), _lift(b)
    if a.value.shape[-1] != b.value.shape[0 if b.value.ndim == 1 else -2]:
        raise ValueError(
            f"matmul inner dimensions do not match: {a.value.shape} @ {b.value.shape}")
    out = a.value @ b.value

    def pull_a(g):
        if b.value.ndim == 1:
            return np.multiply.outer(g, b.value).reshape(a.value.shape)
        return _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.value.shape)

    def pull_b(g):
        if b.value.ndim == 1:
            if a.value.ndim == 1:
                return a.value * g
            return np.tensordot(g, a.value, axes=(tuple(range(g.ndim)),
                                                  tuple(range(a.value.ndim - 1))))
        if a.value.ndim == 1:
            return np.multiply.outer(a.value, g)
        return _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.value.shape)

    return Node(out, _parents=[(a, pull_a), (b, pull_b)])


def reduce_sum(a, axis=None, keepdims: bool = False):
    if not _is_node(a):
        return _as_array(a).sum(axis=axis, keepdims=keepdims)
    a = _lift(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def pull(g):
        g = np.asarray(g)
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape).copy()

    return Node(out, _parents=[(a, pull)])


def reduce_mean(a, axis=None, keepdims: bool = False):
    arr = value_of(a)
    n = arr.size if axis is None else arr.shape[axis]
    return divide(reduce_sum(a, axis=axis, keepdims=keepdims), float(n))


def _getitem(a: Node, key):
    out = a.value[key]

    def pull(g):
        full = np.zeros_like(a.value)
        np.add.at(full, key, g)
        return full

    return Node(out, _parents=[(a, pull)])


def reshape(a, shape):
    if not _is_node(a):
        return _as_array(a).reshape(shape)
    a = _lift(a)
    return Node(a.value.reshape(shape),
                _parents=[(a, lambda g: np.asarray(g).reshape(a.value.shape))])


def concatenate(parts, axis: int = 0):
    if not _is_node(*parts):
        return np.concatenate([_as_array(p) for p in parts], axis=axis)
    parts = [_lift(p) for p in parts]
    out = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_pull(i):
        lo, hi = offsets[i], offsets[i + 1]

        def pull(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return pull

    return Node(out, _parents=[(p, make_pull(i)) for i, p in enumerate(parts)])


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def exp(a):
    if not _is_node(a):
        return np.exp(_as_array(a))
    out = np.exp(a.value)
    return Node(out, _parents=[(a, lambda g: g * out)])


def log(a):
    val = value_of(a)
    if np.any(val <= 0.0):
        raise ValueError("log requires strictly positive input")
    if not _is_node(a):
        return np.log(val)
    return Node(np.log(val), _parents=[(a, lambda g: g / a.value)])


def sqrt(a):
    val = value_of(a)
    if np.any(val < 0.0):
        raise ValueError("sqrt requires non-negative input")
    if not _is_node(a):
        return np.sqrt(val)
    out = np.sqrt(val)
    return Node(out, _parents=[(a, lambda g: g / (2.0 * out))])


def square(a):
    if not _is_node(a):
        return np.square(_as_array(a))
    return Node(np.square(a.value), _parents=[(a, lambda g: g * 2.0 * a.value)])


def tanh(a):
    if not _is_node(a):
        return np.tanh(_as_array(a))
    out = np.tanh(a.value)
    return Node(out, _parents=[(a, lambda g: g * (1.0 - out ** 2))])


def sigmoid(a):
    val = value_of(a)
    out = expit(val)
    if not _is_node(a):
        return out
    return Node(out, _parents=[(a, lambda g: g * out * (1.0 - out))])


def softplus(a):
    val = value_of(a)
    out = np.logaddexp(0.0, val)
    if not _is_node(a):
        return out
    return Node(out, _parents=[(a, lambda g: g * sigmoid(val))])


def clip(a, lo: float, hi: float):
    """Clamp to [lo, hi]; gradient is 1 strictly inside, 0 at and outside the bounds."""
    val = value_of(a)
    out = np.clip(val, lo, hi)
    if not _is_node(a):
        return out
    inside = (val > lo) & (val < hi)
    return Node(out, _parents=[(a, lambda g: g * inside)])


# ---------------------------------------------------------------------------
# escape hatch for analytically-known derivatives
# ---------------------------------------------------------------------------

def custom_op(inputs, value, vjps):
    """Record a node with caller-supplied value and vector-Jacobian products.

    ``vjps[i]`` maps the output adjoint to input ``i``'s gradient
    contribution.  Used where a derivative is known analytically but the
    primal is not expressed in recorded ops (e.g. target scores).
    """
    parents = []
    for x, vjp in zip(inputs, vjps):
        if isinstance(x, Node):
            parents.append((x, vjp))
    return Node(value, _parents=parents)
