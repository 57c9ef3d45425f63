"""A small reverse-mode differentiation tape over batched numpy arrays.

Only the handful of primitives needed to differentiate an unrolled network
layer are provided.  Nodes are appended in evaluation order, so a node's
parents always precede it and a single reverse sweep computes every adjoint.
Binary ops broadcast like numpy; adjoints are summed back to parent shapes.
A vjp may return ``None`` for a parent that needs no gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import apply_spd_inverse, spd_inverse_factor

__all__ = ["Node", "Tape", "backward"]


@dataclass
class Node:
    op: str
    parents: tuple
    value: np.ndarray
    requires_grad: bool
    vjp: Callable | None = None
    adjoint: np.ndarray | None = None


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _t(x):
    return np.swapaxes(x, -1, -2)


class Tape:
    """Append-only computation graph.

    Every method returns the integer id of the new node; use :meth:`value` to
    read results.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def value(self, i: int) -> np.ndarray:
        return self.nodes[i].value

    def _req(self, i):
        return self.nodes[i].requires_grad

    def _push(self, op, parents, value, vjp):
        req = any(self.nodes[p].requires_grad for p in parents)
        self.nodes.append(Node(op, tuple(parents), value, req, vjp if req else None))
        return len(self.nodes) - 1

    def leaf(self, value, requires_grad: bool = False) -> int:
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node("leaf", (), value, requires_grad))
        return len(self.nodes) - 1

    # -- linear algebra ---------------------------------------------------

    def matmul(self, a: int, b: int, transpose_a=False, transpose_b=False) -> int:
        av, bv = self.value(a), self.value(b)
        lhs = _t(av) if transpose_a else av
        rhs = _t(bv) if transpose_b else bv

        ra, rb = self._req(a), self._req(b)

        def vjp(g):
            ga = gb = None
            if ra:
                ga = g @ _t(rhs)
                ga = _unbroadcast(_t(ga) if transpose_a else ga, av.shape)
            if rb:
                gb = _t(lhs) @ g
                gb = _unbroadcast(_t(gb) if transpose_b else gb, bv.shape)
            return ga, gb

        return self._push("matmul", (a, b), lhs @ rhs, vjp)

    def solve_spd(self, s: int, b: int) -> int:
        """``z = s^{-1} b``; adjoints ``b' = s^{-1} z'`` and ``s' = -sym(b' z^T)``."""
        sv, bv = self.value(s), self.value(b)
        linv = spd_inverse_factor(sv)
        z = apply_spd_inverse(linv, bv)

        rs = self._req(s)

        def vjp(g):
            gb = apply_spd_inverse(linv, g)
            gs = None
            if rs:
                gs = -gb @ _t(z)
                gs = _unbroadcast(0.5 * (gs + _t(gs)), sv.shape)
            return gs, _unbroadcast(gb, bv.shape)

        return self._push("solveSpd", (s, b), z, vjp)

    # -- elementwise --------------------------------------------------------

    def add(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        return self._push("add", (a, b), av + bv,
                          lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))

    def sub(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        return self._push("sub", (a, b), av - bv,
                          lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))

    def mul(self, a: int, b: int) -> int:
        av, bv = self.value(a), self.value(b)
        ra, rb = self._req(a), self._req(b)
        return self._push("elemMul", (a, b), av * bv,
                          lambda g: (_unbroadcast(g * bv, av.shape) if ra else None,
                                     _unbroadcast(g * av, bv.shape) if rb else None))

    def scale(self, a: int, c: float) -> int:
        return self._push("scale", (a,), c * self.value(a), lambda g: (c * g,))

    def relu(self, a: int) -> int:
        av = self.value(a)
        mask = av > 0
        return self._push("relu", (a,), np.where(mask, av, 0.0), lambda g: (g * mask,))

    def clamp(self, a: int, lo: float, hi: float) -> int:
        """Clip to ``[lo, hi]``; the adjoint passes through only strictly inside."""
        av = self.value(a)
        mask = (av > lo) & (av < hi)
        return self._push("clamp", (a,), np.clip(av, lo, hi), lambda g: (g * mask,))

    # -- structural ---------------------------------------------------------

    def concat(self, ids) -> int:
        """Join along the last axis, broadcasting the leading axes."""
        shapes = [self.value(i).shape for i in ids]
        lead = np.broadcast_shapes(*[s[:-1] for s in shapes])
        out = np.concatenate([np.broadcast_to(self.value(i), lead + s[-1:]) for i, s in zip(ids, shapes)],
                             axis=-1)
        cuts = np.cumsum([s[-1] for s in shapes])[:-1]

        def vjp(g):
            parts = np.split(g, cuts, axis=-1)
            return tuple(_unbroadcast(p, s) for p, s in zip(parts, shapes))

        return self._push("concat", tuple(ids), out, vjp)

    def slice(self, a: int, key) -> int:
        av = self.value(a)

        def vjp(g):
            out = np.zeros_like(av)
            out[key] = g
            return (out,)

        return self._push("slice", (a,), av[key], vjp)

    def reshape(self, a: int, shape) -> int:
        av = self.value(a)
        return self._push("reshape", (a,), av.reshape(shape), lambda g: (g.reshape(av.shape),))

    def sum(self, a: int, axis=None) -> int:
        av = self.value(a)

        def vjp(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, av.shape).copy(),)

        return self._push("sum", (a,), av.sum(axis=axis), vjp)

    def sum_sq(self, a: int) -> int:
        av = self.value(a)
        return self._push("sumSq", (a,), np.asarray(np.sum(av * av)), lambda g: (2.0 * g * av,))


def backward(tape: Tape, root: int) -> dict:
    """Reverse sweep from the scalar node ``root``.

    Fills ``node.adjoint`` for every node that depends on a differentiable
    leaf and returns ``{leaf_id: adjoint}`` for those leaves.
    """
    nodes = tape.nodes
    if nodes[root].value.size != 1:
        raise ValueError("backward needs a scalar root")
    for node in nodes:
        node.adjoint = None
    nodes[root].adjoint = np.ones_like(nodes[root].value)
    for i in range(root, -1, -1):
        node = nodes[i]
        if node.adjoint is None or node.vjp is None:
            continue
        grads = node.vjp(node.adjoint)
        for p, g in zip(node.parents, grads):
            parent = nodes[p]
            if g is None or not parent.requires_grad:
                continue
            parent.adjoint = g if parent.adjoint is None else parent.adjoint + g
    return {i: n.adjoint for i, n in enumerate(nodes)
            if n.op == "leaf" and n.requires_grad and n.adjoint is not None}
