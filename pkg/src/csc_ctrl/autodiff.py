"""Tape-based reverse-mode differentiation over the primitives in :mod:`csc_ctrl.tensor`.

A :class:`Graph` records operations in execution order; since inputs always exist
before the node that consumes them, insertion order is a topological order and
``backward`` is a single reverse sweep.

    g = Graph()
    a = g.param("a", np.array(3.0))
    y = a * g.stop_gradient(a)
    g.backward(y)["a"]   # -> 3.0
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import ShapeError, NumericError


@dataclass
class _Op:
    forward: Callable  # (values, attrs) -> (out, saved)
    backward: Callable  # (grad, values, out, saved, attrs) -> list of grads (None = no flow)


OPS: dict[str, _Op] = {}


def register(name: str):
    def wrap(cls):
        OPS[name] = _Op(cls.forward, cls.backward)
        return cls

    return wrap


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Node:
    """A value on the tape."""

    __array_priority__ = 1000

    def __init__(self, graph: "Graph", value: np.ndarray, requires_grad: bool, nid: int | None):
        self.graph = graph
        self.value = value
        self.requires_grad = requires_grad
        self.id = nid

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other) -> "Node":
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        return self.graph.record("add", [self, self._lift(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return self.graph.record("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.graph.record("sub", [self._lift(other), self])

    def __mul__(self, other):
        if np.isscalar(other):
            return self.graph.record("scale", [self], c=float(other))
        return self.graph.record("mul", [self, self._lift(other)])

    __rmul__ = __mul__

    def __neg__(self):
        return self.graph.record("scale", [self], c=-1.0)

    def __matmul__(self, other):
        return self.graph.record("matmul", [self, self._lift(other)])

    @property
    def T(self):
        return self.graph.record("transpose", [self])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self.graph.record("reshape", [self], shape=shape)

    def sum(self):
        return self.graph.record("sum", [self])

    def __repr__(self):
        return f"Node(id={self.id}, shape={self.shape}, grad={self.requires_grad})"


class Graph:
    """Append-only record of operations.

    With ``enable_grad=False`` operations still compute forward values but nothing
    is retained, which makes the same model code usable for plain inference.
    """

    def __init__(self, enable_grad: bool = True):
        self.enable_grad = enable_grad
        self.nodes: list[tuple] = []  # (node, op name, input nodes, saved, attrs)
        self.params: dict[str, Node] = {}

    def _leaf(self, value, requires_grad: bool) -> Node:
        node = Node(self, T.check_finite(T.asarray(value)), requires_grad, None)
        if self.enable_grad:
            node.id = len(self.nodes)
            self.nodes.append((node, None, (), None, None))
        return node

    def constant(self, value) -> Node:
        return self._leaf(value, False)

    def param(self, name: str, value) -> Node:
        """Register a trainable leaf. Registering a name twice returns the same node."""
        if name in self.params:
            return self.params[name]
        node = self._leaf(value, True)
        self.params[name] = node
        return node

    def record(self, op: str, inputs: list[Node], **attrs) -> Node:
        if op not in OPS:
            raise KeyError(f"unknown op {op!r}")
        for x in inputs:
            if not isinstance(x, Node) or x.graph is not self:
                raise ValueError(f"input of {op} is not a node of this graph")
        spec = OPS[op]
        values = [x.value for x in inputs]
        out, saved = spec.forward(values, attrs)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{op} produced non-finite values")
        needs = self.enable_grad and op != "stop_gradient" and any(x.requires_grad for x in inputs)
        node = Node(self, out, needs, None)
        if self.enable_grad:
            node.id = len(self.nodes)
            self.nodes.append((node, op, tuple(inputs), saved if needs else None, attrs))
        return node

    def stop_gradient(self, node: Node) -> Node:
        return self.record("stop_gradient", [node])

    def backward(self, root: Node, retain_graph: bool = False) -> dict[str, np.ndarray]:
        """Gradients of scalar ``root`` for every registered parameter (zeros if unreached).

        The tape is released afterwards unless ``retain_graph``; nodes reference
        their graph, so a retained tape lives until the cycle collector runs.
        """
        if not self.enable_grad:
            raise RuntimeError("graph has no tape (built with enable_grad=False or already released)")
        if root.value.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        grads: dict[int, np.ndarray] = {root.id: np.ones_like(root.value)}
        for node, op, inputs, saved, attrs in reversed(self.nodes[: root.id + 1]):
            g = grads.pop(node.id, None) if op is not None else grads.get(node.id)
            if g is None or op is None or not node.requires_grad:
                continue
            values = [x.value for x in inputs]
            for x, gx in zip(inputs, OPS[op].backward(g, values, node.value, saved, attrs)):
                if gx is None or not x.requires_grad:
                    continue
                gx = _unbroadcast(gx, x.shape)
                if x.id in grads:
                    grads[x.id] = grads[x.id] + gx
                else:
                    grads[x.id] = gx
        out = {}
        for name, p in self.params.items():
            g = grads.get(p.id)
            out[name] = np.zeros_like(p.value) if g is None else T.check_finite(g, f"gradient of {name}")
        if not retain_graph:
            self.release()
        return out

    def release(self) -> None:
        """Drop the recorded operations; node values stay readable."""
        self.nodes = []
        self.enable_grad = False


# -- primitives ---------------------------------------------------------------


@register("add")
class _Add:
    forward = staticmethod(lambda v, a: (v[0] + v[1], None))
    backward = staticmethod(lambda g, v, out, s, a: [g, g])


@register("sub")
class _Sub:
    forward = staticmethod(lambda v, a: (v[0] - v[1], None))
    backward = staticmethod(lambda g, v, out, s, a: [g, -g])


@register("mul")
class _Mul:
    forward = staticmethod(lambda v, a: (v[0] * v[1], None))
    backward = staticmethod(lambda g, v, out, s, a: [g * v[1], g * v[0]])


@register("scale")
class _Scale:
    forward = staticmethod(lambda v, a: (a["c"] * v[0], None))
    backward = staticmethod(lambda g, v, out, s, a: [a["c"] * g])


@register("matmul")
class _Matmul:
    forward = staticmethod(lambda v, a: (v[0] @ v[1], None))
    backward = staticmethod(lambda g, v, out, s, a: [g @ v[1].T, v[0].T @ g])


@register("transpose")
class _Transpose:
    forward = staticmethod(lambda v, a: (np.ascontiguousarray(v[0].T), None))
    backward = staticmethod(lambda g, v, out, s, a: [g.T])


@register("reshape")
class _Reshape:
    forward = staticmethod(lambda v, a: (v[0].reshape(a["shape"]), None))
    backward = staticmethod(lambda g, v, out, s, a: [g.reshape(v[0].shape)])


@register("sum")
class _Sum:
    forward = staticmethod(lambda v, a: (np.asarray(v[0].sum()), None))
    backward = staticmethod(lambda g, v, out, s, a: [np.full_like(v[0], g)])


@register("concat")
class _Concat:
    @staticmethod
    def forward(v, a):
        return np.concatenate(v, axis=a["axis"]), None

    @staticmethod
    def backward(g, v, out, s, a):
        cuts = np.cumsum([x.shape[a["axis"]] for x in v])[:-1]
        return np.split(g, cuts, axis=a["axis"])


@register("stop_gradient")
class _Stop:
    forward = staticmethod(lambda v, a: (v[0], None))
    backward = staticmethod(lambda g, v, out, s, a: [None])


@register("conv2d")
class _Conv:
    forward = staticmethod(lambda v, a: (T.conv2d(v[0], v[1], a["geom"]), None))

    @staticmethod
    def backward(g, v, out, s, a):
        x, k = v
        geom = a["geom"]
        return [T.deconv2d(g, k, geom, out_hw=x.shape[2:]), T.conv2d_kernel_grad(x, g, geom)]


@register("deconv2d")
class _Deconv:
    forward = staticmethod(lambda v, a: (T.deconv2d(v[0], v[1], a["geom"], a.get("out_hw")), None))

    @staticmethod
    def backward(g, v, out, s, a):
        z, k = v
        geom = a["geom"]
        return [T.conv2d(g, k, geom), T.conv2d_kernel_grad(g, z, geom)]


@register("soft_threshold")
class _Shrink:
    forward = staticmethod(lambda v, a: (T.soft_threshold(v[0], a["lam"]), None))
    # subgradient 0 at the kink
    backward = staticmethod(lambda g, v, out, s, a: [g * (np.abs(v[0]) > a["lam"])])


@register("relu")
class _Relu:
    forward = staticmethod(lambda v, a: (T.relu(v[0]), None))
    backward = staticmethod(lambda g, v, out, s, a: [g * (v[0] > 0)])


@register("leaky_relu")
class _LeakyRelu:
    forward = staticmethod(lambda v, a: (T.leaky_relu(v[0], a["slope"]), None))
    backward = staticmethod(lambda g, v, out, s, a: [g * np.where(v[0] > 0, 1.0, a["slope"])])


@register("tanh")
class _Tanh:
    forward = staticmethod(lambda v, a: (T.tanh(v[0]), None))
    backward = staticmethod(lambda g, v, out, s, a: [g * (1.0 - out * out)])


@register("batch_norm")
class _BatchNorm:
    """Inputs: x, weight, bias. attrs: mean/var to normalize with, ``batch`` flag."""

    @staticmethod
    def forward(v, a):
        x, w, b = v
        nd = x.ndim
        inv = 1.0 / np.sqrt(T._bcast(a["var"], nd) + a["eps"])
        xhat = (x - T._bcast(a["mean"], nd)) * inv
        return T._bcast(w, nd) * xhat + T._bcast(b, nd), (xhat, inv)

    @staticmethod
    def backward(g, v, out, saved, a):
        x, w, _ = v
        xhat, inv = saved
        nd = x.ndim
        axes = (0,) + tuple(range(2, nd))
        gw = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * T._bcast(w, nd)
        if a["batch"]:
            # batch statistics depend on x
            gx = inv * (
                gxhat
                - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv
        return [gx, gw, gb]


@register("logdet")
class _Logdet:
    """log det of the symmetric part of an SPD matrix, via Cholesky."""

    @staticmethod
    def forward(v, a):
        S = v[0]
        sym = 0.5 * (S + S.T)
        try:
            L = np.linalg.cholesky(sym)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"Cholesky failed in logdet: {exc}") from None
        return np.asarray(2.0 * np.log(np.diag(L)).sum()), L

    @staticmethod
    def backward(g, v, out, L, a):
        eye = np.eye(L.shape[0], dtype=L.dtype)
        Linv = np.linalg.solve(L, eye)
        return [g * (Linv.T @ Linv)]


# -- functional wrappers ------------------------------------------------------


def conv2d(x: Node, k: Node, geom) -> Node:
    return x.graph.record("conv2d", [x, k], geom=geom)


def deconv2d(z: Node, k: Node, geom, out_hw=None) -> Node:
    return z.graph.record("deconv2d", [z, k], geom=geom, out_hw=out_hw)


def soft_threshold(v: Node, lam: float) -> Node:
    if lam < 0:
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    return v.graph.record("soft_threshold", [v], lam=float(lam))


def relu(v: Node) -> Node:
    return v.graph.record("relu", [v])


def leaky_relu(v: Node, slope: float = T.LEAKY_SLOPE) -> Node:
    return v.graph.record("leaky_relu", [v], slope=float(slope))


def tanh(v: Node) -> Node:
    return v.graph.record("tanh", [v])


def concat(nodes: list[Node], axis: int = 0) -> Node:
    return nodes[0].graph.record("concat", list(nodes), axis=axis)


def logdet(S: Node) -> Node:
    return S.graph.record("logdet", [S])


def batch_norm(x: Node, weight: Node, bias: Node, state: T.BatchNormState, mode: str = "train") -> Node:
    """Batch norm on the tape; running statistics on ``state`` update in train mode."""
    if x.shape[1] != state.channels:
        raise ShapeError(f"input {x.shape} does not have {state.channels} channels")
    if mode == "train":
        mean, var = T.batch_stats(x.value)
        n = x.value.size // x.shape[1]
        state.update(mean, var * n / max(n - 1, 1))
        batch = True
    elif mode == "eval":
        mean, var, batch = state.running_mean, state.running_var, False
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return x.graph.record("batch_norm", [x, weight, bias], mean=mean, var=var, eps=state.eps, batch=batch)


def activation(v: Node, name: str) -> Node:
    if name == "relu":
        return relu(v)
    if name == "lrelu":
        return leaky_relu(v)
    if name == "tanh":
        return tanh(v)
    if name == "none":
        return v
    raise ValueError(f"unknown activation {name!r}")
