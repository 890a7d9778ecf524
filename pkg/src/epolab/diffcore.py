"""Minimal tape-based reverse-mode differentiation on float64 numpy arrays.

Nodes are appended to a :class:`Graph` as they are created, so creation
order is already a topological order and :meth:`Graph.backward` just walks
the tape in reverse.  Only first derivatives are supported.

    g = Graph()
    w = g.leaf(np.ones((2, 3)), name="w")
    x = g.const(np.ones((4, 3)))
    loss = mean(squared_error(affine(x, w), g.const(np.zeros((4, 2)))))
    grads = g.backward(loss)       # {"w": array of shape (2, 3)}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Graph", "Node", "AdamState", "adam_step",
    "add", "sub", "mul", "neg", "scale", "shift", "matmul", "affine",
    "tanh", "sigmoid", "log_sigmoid", "sum", "mean", "squared_error",
    "logsumexp", "concat", "take",
]


def _shape_error(op: str, a: tuple, b: tuple) -> ValueError:
    return ValueError(f"{op}: shape mismatch {a} vs {b}")


class Node:
    __slots__ = ("graph", "op", "inputs", "value", "vjp", "name", "requires_grad", "index")

    def __init__(self, graph, op, inputs, value, vjp, name=None, requires_grad=False):
        self.graph = graph
        self.op = op
        self.inputs = inputs
        self.value = value
        self.vjp = vjp
        self.name = name
        self.requires_grad = requires_grad
        self.index = len(graph.nodes)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node#{self.index}<{self.op}{label} shape={self.shape}>"

    def __add__(self, other):
        return shift(self, other) if np.isscalar(other) else add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return shift(self, -other) if np.isscalar(other) else sub(self, other)

    def __rsub__(self, other):
        return shift(neg(self), other) if np.isscalar(other) else sub(other, self)

    def __mul__(self, other):
        return scale(self, other) if np.isscalar(other) else mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """A tape of nodes. Single owner; not meant to be shared between threads."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, name: str | None = None, requires_grad: bool = True) -> Node:
        arr = np.array(value, dtype=np.float64)
        node = Node(self, "leaf", (), arr, None, name=name, requires_grad=requires_grad)
        self.nodes.append(node)
        return node

    def const(self, value) -> Node:
        return self.leaf(value, requires_grad=False)

    def _record(self, op: str, inputs: Sequence[Node], value: np.ndarray, vjp: Callable) -> Node:
        needs = any(n.requires_grad for n in inputs)
        node = Node(self, op, tuple(inputs), value, vjp if needs else None, requires_grad=needs)
        self.nodes.append(node)
        return node

    def backward(self, root: Node) -> dict[str, np.ndarray]:
        """Gradients of the scalar ``root`` with respect to every named differentiable leaf."""
        if root.graph is not self:
            raise ValueError("root node belongs to a different graph")
        if root.value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {root.index: np.ones_like(root.value)}
        for node in reversed(self.nodes[: root.index + 1]):
            g = grads.get(node.index)
            if g is None or node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.index in grads:
                    grads[inp.index] = grads[inp.index] + gi
                else:
                    grads[inp.index] = gi
        out = {}
        for node in self.nodes:
            if node.op == "leaf" and node.requires_grad and node.name is not None:
                out[node.name] = grads.get(node.index, np.zeros_like(node.value))
        return out


def _as_node(x, graph: Graph) -> Node:
    return x if isinstance(x, Node) else graph.const(x)


def _graph_of(*xs) -> Graph:
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise TypeError("at least one operand must be a Node")


def _binary(a, b):
    g = _graph_of(a, b)
    return g, _as_node(a, g), _as_node(b, g)


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Node:
    g, a, b = _binary(a, b)
    if a.shape != b.shape:
        raise _shape_error("add", a.shape, b.shape)
    return g._record("add", (a, b), a.value + b.value, lambda u: (u, u))


def sub(a, b) -> Node:
    g, a, b = _binary(a, b)
    if a.shape != b.shape:
        raise _shape_error("subtract", a.shape, b.shape)
    return g._record("sub", (a, b), a.value - b.value, lambda u: (u, -u))


def mul(a, b) -> Node:
    g, a, b = _binary(a, b)
    if a.shape != b.shape:
        raise _shape_error("multiply", a.shape, b.shape)
    av, bv = a.value, b.value
    return g._record("mul", (a, b), av * bv, lambda u: (u * bv, u * av))


def neg(a: Node) -> Node:
    return a.graph._record("neg", (a,), -a.value, lambda u: (-u,))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.graph._record("scale", (a,), c * a.value, lambda u: (c * u,))


def shift(a: Node, c: float) -> Node:
    c = float(c)
    return a.graph._record("shift", (a,), a.value + c, lambda u: (u,))


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return a.graph._record("tanh", (a,), y, lambda u: (u * (1.0 - y * y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Node) -> Node:
    y = _sigmoid(a.value)
    return a.graph._record("sigmoid", (a,), y, lambda u: (u * y * (1.0 - y),))


def log_sigmoid(a: Node) -> Node:
    x = a.value
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    s_neg = _sigmoid(-x)
    return a.graph._record("log_sigmoid", (a,), y, lambda u: (u * s_neg,))


def squared_error(a, b) -> Node:
    g, a, b = _binary(a, b)
    if a.shape != b.shape:
        raise _shape_error("squared_error", a.shape, b.shape)
    d = a.value - b.value
    return g._record("squared_error", (a, b), d * d, lambda u: (2.0 * u * d, -2.0 * u * d))


# --- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Node:
    g, a, b = _binary(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return g._record("matmul", (a, b), av @ bv, lambda u: (u @ bv.T, av.T @ u))


def affine(x, w, b=None) -> Node:
    """``x @ w.T + b`` for a batch ``x`` of shape (n, in) and weight (out, in)."""
    g = _graph_of(x, w, b)
    x, w = _as_node(x, g), _as_node(w, g)
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1]:
        raise _shape_error("affine", x.shape, w.shape)
    xv, wv = x.value, w.value
    y = xv @ wv.T
    if b is None:
        return g._record("affine", (x, w), y, lambda u: (u @ wv, u.T @ xv))
    b = _as_node(b, g)
    if b.shape != (w.shape[0],):
        raise _shape_error("affine bias", b.shape, (w.shape[0],))
    return g._record("affine", (x, w, b), y + b.value,
                     lambda u: (u @ wv, u.T @ xv, u.sum(axis=0)))


# --- reductions ---------------------------------------------------------------

def sum(a: Node, axis: int | None = None) -> Node:  # noqa: A001 - mirrors numpy
    shape = a.shape
    y = np.sum(a.value, axis=axis)

    def vjp(u):
        if axis is None:
            return (np.broadcast_to(u, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(u, axis), shape).copy(),)

    return a.graph._record("sum", (a,), np.asarray(y), vjp)


def mean(a: Node, axis: int | None = None) -> Node:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


def logsumexp(items) -> Node:
    """Stable log-sum-exp over a list of scalar nodes (or over a 1-D node)."""
    if isinstance(items, Node):
        if items.value.ndim != 1:
            raise ValueError(f"logsumexp expects a 1-D node, got shape {items.shape}")
        vec, inputs = items.value, (items,)
    else:
        items = list(items)
        if not items:
            raise ValueError("logsumexp of an empty list")
        for it in items:
            if it.value.size != 1:
                raise ValueError(f"logsumexp list entries must be scalars, got shape {it.shape}")
        vec = np.array([float(it.value) for it in items])
        inputs = tuple(items)
    m = vec.max()
    w = np.exp(vec - m)
    z = w.sum()
    y = np.asarray(m + np.log(z))
    soft = w / z

    if isinstance(items, Node):
        def vjp(u):
            return (u * soft,)
    else:
        shapes = [it.shape for it in items]

        def vjp(u):
            return tuple(np.full(s, float(u) * p) for s, p in zip(shapes, soft))

    return inputs[0].graph._record("logsumexp", inputs, y, vjp)


# --- structure ------------------------------------------------------------------

def concat(items: Sequence[Node], axis: int = 0) -> Node:
    items = list(items)
    if not items:
        raise ValueError("concat of an empty list")
    ref = items[0].shape
    for it in items[1:]:
        if len(it.shape) != len(ref) or any(
            s != r for k, (s, r) in enumerate(zip(it.shape, ref)) if k != axis % len(ref)
        ):
            raise _shape_error("concat", ref, it.shape)
    y = np.concatenate([it.value for it in items], axis=axis)
    bounds = np.cumsum([it.shape[axis] for it in items])[:-1]
    return items[0].graph._record("concat", tuple(items), y,
                                  lambda u: tuple(np.split(u, bounds, axis=axis)))


def take(a: Node, index: int) -> Node:
    """``a[index]`` along the first axis."""
    shape = a.shape
    if not -shape[0] <= index < shape[0]:
        raise IndexError(f"take: index {index} out of range for shape {shape}")

    def vjp(u):
        out = np.zeros(shape)
        out[index] = u
        return (out,)

    return a.graph._record("take", (a,), np.array(a.value[index]), vjp)


# --- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "step": self.step,
            "m": {k: a.tolist() for k, a in self.m.items()},
            "v": {k: a.tolist() for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(
            lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"], step=d["step"],
            m={k: np.array(a, dtype=np.float64) for k, a in d["m"].items()},
            v={k: np.array(a, dtype=np.float64) for k, a in d["v"].items()},
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update over the parameters named in ``grads``.

    Parameters absent from ``grads`` are passed through untouched.
    Raises ``FloatingPointError`` naming the parameter if a gradient is not finite.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise _shape_error(f"adam ({name})", params[name].shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = dict(params)
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - state.beta1) * g if m is None else state.beta1 * m + (1.0 - state.beta1) * g
        v = (1.0 - state.beta2) * g * g if v is None else state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        out[name] = params[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state
