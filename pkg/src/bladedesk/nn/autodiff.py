"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tape`` records every operation of one forward evaluation in execution
order; ``Tape.backward`` walks the record in reverse, accumulating
vector-Jacobian products. There is no global graph: each forward call owns
its tape, which keeps the design re-entrant and the memory lifetime obvious.

Operations accept either ``Node`` operands (gradients flow) or plain
arrays/floats (treated as constants). All values are arrays of float64;
mixed precision is deliberately unsupported.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from ..errors import ShapeMismatch

Array = np.ndarray


class Node:
    """One recorded value. ``parents``/``vjps`` drive the backward sweep."""

    __slots__ = ("value", "parents", "vjps", "grad")

    def __init__(self, value: Array, parents: tuple["Node", ...], vjps: tuple[Callable, ...]):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


class Tape:
    """Execution-ordered record of one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def node(self, value, parents=(), vjps=()) -> Node:
        n = Node(np.asarray(value, dtype=np.float64), tuple(parents), tuple(vjps))
        self.nodes.append(n)
        return n

    def leaf(self, value) -> Node:
        return self.node(value)

    def backward(self, out: Node, seed=1.0) -> None:
        """Accumulate d(out·seed)/d(node) into ``node.grad`` for every node.

        ``seed`` is the gradient of the final scalar loss with respect to
        ``out`` (1.0 when ``out`` is the loss itself). Creation order is a
        topological order, so a single reverse sweep suffices.
        """
        out.grad = np.broadcast_to(np.asarray(seed, dtype=np.float64), out.value.shape).copy()
        for n in reversed(self.nodes):
            g = n.grad
            if g is None:
                continue
            for parent, vjp in zip(n.parents, n.vjps):
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib


def _is_node(x) -> bool:
    return isinstance(x, Node)


def _value(x) -> Array:
    return x.value if _is_node(x) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _record(tape: Tape, value, operands, vjps) -> Node:
    """Record ``value``; keep only Node operands (constants get no vjp)."""
    parents, kept = [], []
    for op, vjp in zip(operands, vjps):
        if _is_node(op):
            parents.append(op)
            kept.append(vjp)
    return tape.node(value, parents, kept)


def add(tape: Tape, a, b) -> Node:
    av, bv = _value(a), _value(b)
    out = av + bv
    return _record(
        tape, out, (a, b),
        (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(g, bv.shape)),
    )


def sub(tape: Tape, a, b) -> Node:
    av, bv = _value(a), _value(b)
    out = av - bv
    return _record(
        tape, out, (a, b),
        (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(-g, bv.shape)),
    )


def mul(tape: Tape, a, b) -> Node:
    av, bv = _value(a), _value(b)
    out = av * bv
    return _record(
        tape, out, (a, b),
        (lambda g: _unbroadcast(g * bv, av.shape), lambda g: _unbroadcast(g * av, bv.shape)),
    )


def scale(tape: Tape, x, c: float) -> Node:
    c = float(c)
    return _record(tape, _value(x) * c, (x,), (lambda g: g * c,))


def matmul(tape: Tape, a, b) -> Node:
    """Matrix product with numpy batch broadcasting; operands must be >= 2-D."""
    av, bv = _value(a), _value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeMismatch(f"inner dimensions disagree: {av.shape} @ {bv.shape}")
    out = av @ bv

    def vjp_a(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def vjp_b(g):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _record(tape, out, (a, b), (vjp_a, vjp_b))


def power(tape: Tape, x, p: float) -> Node:
    xv = _value(x)
    p = float(p)
    out = xv ** p
    return _record(tape, out, (x,), (lambda g: g * p * xv ** (p - 1.0),))


def silu(tape: Tape, x) -> Node:
    xv = _value(x)
    s = expit(xv)
    out = xv * s
    return _record(tape, out, (x,), (lambda g: g * (s * (1.0 + xv * (1.0 - s))),))


def softmax(tape: Tape, x, axis: int = -1) -> Node:
    """Numerically stable softmax along ``axis`` (max-subtraction form)."""
    xv = _value(x)
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (g - (g * y).sum(axis=axis, keepdims=True)) * y

    return _record(tape, y, (x,), (vjp,))


def sum_(tape: Tape, x, axis=None, keepdims: bool = False) -> Node:
    xv = _value(x)
    out = xv.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, xv.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape).copy()

    return _record(tape, out, (x,), (vjp,))


def mean_(tape: Tape, x, axis=None, keepdims: bool = False) -> Node:
    xv = _value(x)
    n = xv.size if axis is None else xv.shape[axis]
    return scale(tape, sum_(tape, x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(tape: Tape, x, shape) -> Node:
    xv = _value(x)
    out = xv.reshape(shape)
    return _record(tape, out, (x,), (lambda g: g.reshape(xv.shape),))


def transpose(tape: Tape, x, axes: Sequence[int]) -> Node:
    xv = _value(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(tape, np.transpose(xv, axes), (x,), (lambda g: np.transpose(g, inv),))


def concat(tape: Tape, xs: Sequence, axis: int = -1) -> Node:
    values = [_value(x) for x in xs]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return _record(tape, out, tuple(xs), tuple(make_vjp(i) for i in range(len(xs))))


def slice_(tape: Tape, x, key) -> Node:
    xv = _value(x)
    out = xv[key]

    def vjp(g):
        full = np.zeros_like(xv)
        full[key] = g
        return full

    return _record(tape, out, (x,), (vjp,))


def layer_norm(tape: Tape, x, gamma, beta, eps: float = 1e-5) -> Node:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    m = mean_(tape, x, axis=-1, keepdims=True)
    d = sub(tape, x, m)
    v = mean_(tape, mul(tape, d, d), axis=-1, keepdims=True)
    inv = power(tape, add(tape, v, np.float64(eps)), -0.5)
    y = mul(tape, d, inv)
    return add(tape, mul(tape, y, gamma), beta)


def attention_values(q: Array, k: Array, v: Array) -> Array:
    """Plain (non-recording) scaled dot-product attention.

    Computes ``softmax(q kᵀ / sqrt(d_k)) v`` with the same max-subtraction
    stabilization as the recorded op, so the two paths agree bitwise.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim < 2 or k.ndim < 2 or v.ndim < 2:
        raise ShapeMismatch("attention operands must be >= 2-D")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatch(f"q/k width disagree: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"k/v row counts disagree: {k.shape} vs {v.shape}")
    if q.shape[-1] < 1:
        raise ShapeMismatch("d_k must be >= 1")
    logits = (q @ np.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=-1, keepdims=True)
    return weights @ v


def attention(tape: Tape, q, k, v) -> Node:
    """Recorded scaled dot-product attention (single head)."""
    d_k = _value(q).shape[-1]
    if d_k < 1:
        raise ShapeMismatch("d_k must be >= 1")
    kt_axes = None
    kv = _value(k)
    kt_axes = tuple(range(kv.ndim - 2)) + (kv.ndim - 1, kv.ndim - 2)
    logits = scale(tape, matmul(tape, q, transpose(tape, k, kt_axes)), 1.0 / np.sqrt(d_k))
    weights = softmax(tape, logits, axis=-1)
    return matmul(tape, weights, v)
