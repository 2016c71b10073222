"""Minimal reverse-mode autodiff over numpy arrays.

A ``Tape`` records an append-only list of nodes; inputs always precede
outputs, so the backward pass is a single reverse sweep over the insertion
order. Ops accept nodes or plain arrays (treated as constants); gradients
accumulate lazily, so untouched nodes cost nothing on the way back.
"""

from __future__ import annotations

import numpy as np

from ..errors import UsageError


class Node:
    __slots__ = ("value", "grad", "_vjp")

    def __init__(self, value):
        self.value = value
        self.grad = None
        self._vjp = None


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=float)


def _accumulate(parent, g):
    if isinstance(parent, Node):
        parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(g, shape):
    """Reduce a gradient back to the shape of a broadcast operand."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tape:
    """Append-only op recorder with a single-sweep backward pass."""

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, value) -> Node:
        node = Node(np.asarray(value, dtype=float))
        self._nodes.append(node)
        return node

    def _push(self, value, vjp) -> Node:
        node = Node(value)
        node._vjp = vjp
        self._nodes.append(node)
        return node

    def backward(self, root: Node) -> None:
        if root.value.size != 1:
            raise UsageError("backward expects a scalar loss node")
        for node in self._nodes:
            node.grad = None
        root.grad = np.ones_like(root.value)
        for node in reversed(self._nodes):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # -- elementwise --------------------------------------------------

    def add(self, a, b) -> Node:
        av, bv = _val(a), _val(b)
        out = av + bv

        def vjp(g):
            _accumulate(a, _unbroadcast(g, av.shape))
            _accumulate(b, _unbroadcast(g, bv.shape))

        return self._push(out, vjp)

    def sub(self, a, b) -> Node:
        av, bv = _val(a), _val(b)
        out = av - bv

        def vjp(g):
            _accumulate(a, _unbroadcast(g, av.shape))
            _accumulate(b, _unbroadcast(-g, bv.shape))

        return self._push(out, vjp)

    def mul(self, a, b) -> Node:
        av, bv = _val(a), _val(b)
        out = av * bv

        def vjp(g):
            _accumulate(a, _unbroadcast(g * bv, av.shape))
            _accumulate(b, _unbroadcast(g * av, bv.shape))

        return self._push(out, vjp)

    def neg(self, a) -> Node:
        av = _val(a)

        def vjp(g):
            _accumulate(a, -g)

        return self._push(-av, vjp)

    def exp(self, a) -> Node:
        out = np.exp(_val(a))

        def vjp(g):
            _accumulate(a, g * out)

        return self._push(out, vjp)

    def log(self, a) -> Node:
        av = _val(a)

        def vjp(g):
            _accumulate(a, g / av)

        return self._push(np.log(av), vjp)

    def tanh(self, a) -> Node:
        out = np.tanh(_val(a))

        def vjp(g):
            _accumulate(a, g * (1.0 - out * out))

        return self._push(out, vjp)

    def sigmoid(self, a) -> Node:
        av = _val(a)
        out = 1.0 / (1.0 + np.exp(-av))

        def vjp(g):
            _accumulate(a, g * out * (1.0 - out))

        return self._push(out, vjp)

    def arctan(self, a) -> Node:
        av = _val(a)

        def vjp(g):
            _accumulate(a, g / (1.0 + av * av))

        return self._push(np.arctan(av), vjp)

    def square(self, a) -> Node:
        av = _val(a)

        def vjp(g):
            _accumulate(a, g * 2.0 * av)

        return self._push(av * av, vjp)

    # -- linear algebra / shape ---------------------------------------

    def matmul(self, a, b) -> Node:
        av, bv = _val(a), _val(b)
        out = av @ bv

        def vjp(g):
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.T @ g)

        return self._push(out, vjp)

    def reshape(self, a, shape) -> Node:
        av = _val(a)
        old = av.shape

        def vjp(g):
            _accumulate(a, g.reshape(old))

        return self._push(av.reshape(shape), vjp)

    def concat(self, parts, axis=-1) -> Node:
        vals = [_val(p) for p in parts]
        out = np.concatenate(vals, axis=axis)
        sizes = [v.shape[axis] for v in vals]
        bounds = np.cumsum([0] + sizes)

        def vjp(g):
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                _accumulate(p, np.take(g, range(lo, hi), axis=axis))

        return self._push(out, vjp)

    def cols(self, a, start, stop) -> Node:
        """Contiguous column slice of a 2-d node."""
        av = _val(a)

        def vjp(g):
            full = np.zeros_like(av)
            full[:, start:stop] = g
            _accumulate(a, full)

        return self._push(av[:, start:stop], vjp)

    def sum(self, a, axis=None, keepdims=False) -> Node:
        av = _val(a)

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, av.shape).copy())

        return self._push(av.sum(axis=axis, keepdims=keepdims), vjp)

    def mean(self, a, axis=None, keepdims=False) -> Node:
        av = _val(a)
        count = av.size if axis is None else av.shape[axis]

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, av.shape) / count)

        return self._push(av.mean(axis=axis, keepdims=keepdims), vjp)

    def log_softmax(self, a) -> Node:
        """Row-wise log-softmax over the last axis."""
        av = _val(a)
        shifted = av - av.max(axis=-1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

        def vjp(g):
            soft = np.exp(out)
            _accumulate(a, g - soft * g.sum(axis=-1, keepdims=True))

        return self._push(out, vjp)
