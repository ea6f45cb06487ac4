"""Small tape-based reverse-mode differentiation over float64 numpy arrays.

Only the operations the forecaster needs are provided. A forward pass
records every intermediate :class:`Node` on a :class:`Tape`; ``backward``
walks the tape in reverse and accumulates gradients into every node.

    >>> tape = Tape()
    >>> x = tape.param(np.array(3.0), "x")
    >>> y = mul(x, x)
    >>> tape.backward(y)["x"]
    array(6.)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ShapeError

__all__ = [
    "Node",
    "Tape",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "concat",
    "broadcast_to",
    "reshape",
    "leaky_relu",
    "relu",
    "exp",
    "masked_softmax",
    "sum",
    "mean",
    "square",
    "forward",
    "backward",
    "finite_diff_check",
]


class Node:
    __slots__ = ("value", "grad", "op", "inputs", "tape", "name", "_vjp")

    def __init__(self, tape: "Tape", value, op: str, inputs=(), vjp=None, name=None):
        self.tape = tape
        self.value = value
        self.op = op
        self.inputs = tuple(inputs)
        self._vjp = vjp
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.shape})"


class Tape:
    """Topologically ordered record of one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self._done = False

    def _record(self, node: Node) -> Node:
        self.nodes.append(node)
        return node

    def param(self, value, name: str) -> Node:
        node = self._record(Node(self, np.array(value, dtype=np.float64), "param", name=name))
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return self._record(Node(self, np.asarray(value, dtype=np.float64), "const"))

    def backward(self, output: Node, seed=None) -> dict[str, np.ndarray]:
        """Accumulate d(output)/d(node) into every node; return parameter gradients.

        ``seed`` defaults to ones shaped like the output.
        """
        if not self.nodes or output.tape is not self:
            raise RuntimeError("backward called before a forward pass was recorded on this tape")
        if self._done:
            raise RuntimeError("backward already run on this tape; record a new forward pass")
        self._done = True
        g = np.ones_like(output.value) if seed is None else np.asarray(seed, dtype=np.float64)
        if g.shape != output.value.shape:
            raise ShapeError(f"backward: seed shape {g.shape} != output shape {output.value.shape}")
        output.grad = g.copy()
        stop = self.nodes.index(output)
        for node in reversed(self.nodes[: stop + 1]):
            if node.grad is None or node._vjp is None:
                continue
            for parent, pg in zip(node.inputs, node._vjp(node.grad)):
                if pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(pg, dtype=np.float64)
                else:
                    parent.grad = parent.grad + pg
        return {
            name: (node.grad if node.grad is not None else np.zeros_like(node.value))
            for name, node in self.params.items()
        }


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one operand must be a Node")


def _lift(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.const(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _bshape(op: str, a: Node, b: Node):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    _bshape("add", a, b)
    return t._record(
        Node(t, a.value + b.value, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    )


def sub(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    _bshape("sub", a, b)
    return t._record(
        Node(t, a.value - b.value, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))
    )


def mul(a, b) -> Node:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    _bshape("mul", a, b)
    av, bv = a.value, b.value
    return t._record(
        Node(t, av * bv, "mul", (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))
    )


def matmul(a, b) -> Node:
    """``np.matmul`` semantics, including batch broadcasting and 1-D operands."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise ShapeError("matmul: scalar operands are not allowed")
    a2 = av if av.ndim >= 2 else av[None, :]
    b2 = bv if bv.ndim >= 2 else bv[:, None]
    if a2.shape[-1] != b2.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {av.shape} @ {bv.shape}")
    try:
        out2 = a2 @ b2
    except ValueError:
        raise ShapeError(f"matmul: batch shapes do not broadcast, {av.shape} @ {bv.shape}") from None
    out = out2
    if bv.ndim == 1:
        out = out[..., 0]
    if av.ndim == 1:
        out = out[..., 0, :] if bv.ndim >= 2 else out[..., 0]

    def vjp(g):
        g2 = g.reshape(out2.shape)
        ga = _unbroadcast(g2 @ np.swapaxes(b2, -1, -2), a2.shape).reshape(av.shape)
        gb = _unbroadcast(np.swapaxes(a2, -1, -2) @ g2, b2.shape).reshape(bv.shape)
        return ga, gb

    return t._record(Node(t, out, "matmul", (a, b), vjp))


def transpose(a: Node) -> Node:
    """Swap the last two axes."""
    if a.value.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got shape {a.shape}")
    return a.tape._record(
        Node(a.tape, np.swapaxes(a.value, -1, -2), "transpose", (a,), lambda g: (np.swapaxes(g, -1, -2),))
    )


def concat(parts: Sequence[Node], axis: int = -1) -> Node:
    t = _tape_of(*parts)
    parts = [_lift(t, p) for p in parts]
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([p.value.shape[axis] for p in parts])[:-1]
    return t._record(Node(t, out, "concat", parts, lambda g: tuple(np.split(g, bounds, axis=axis))))


def broadcast_to(a: Node, shape) -> Node:
    try:
        out = np.broadcast_to(a.value, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return a.tape._record(Node(a.tape, out, "broadcast_to", (a,), lambda g: (_unbroadcast(g, a.shape),)))


def reshape(a: Node, shape) -> Node:
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return a.tape._record(Node(a.tape, out, "reshape", (a,), lambda g: (g.reshape(a.shape),)))


def leaky_relu(a: Node, slope: float) -> Node:
    """``max(slope*x, x)`` for ``0 < slope < 1``; derivative 1 at exactly 0."""
    pos = a.value >= 0
    return a.tape._record(
        Node(a.tape, np.where(pos, a.value, slope * a.value), "leaky_relu", (a,), lambda g: (np.where(pos, g, slope * g),))
    )


def relu(a: Node) -> Node:
    pos = a.value >= 0
    return a.tape._record(
        Node(a.tape, np.where(pos, a.value, 0.0), "relu", (a,), lambda g: (np.where(pos, g, 0.0),))
    )


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape._record(Node(a.tape, out, "exp", (a,), lambda g: (g * out,)))


def masked_softmax(a: Node, mask) -> Node:
    """Softmax along the last axis of a (B, n, m) node over entries where ``mask`` (n, m) holds."""
    mask = np.asarray(mask, dtype=bool)
    if a.value.ndim != 3 or a.value.shape[1:] != mask.shape:
        raise ShapeError(f"masked_softmax: logits {a.shape} incompatible with mask {mask.shape}")
    out = kernels.masked_softmax(a.value, mask)
    return a.tape._record(
        Node(a.tape, out, "masked_softmax", (a,), lambda g: (kernels.masked_softmax_backward(out, g),))
    )


def sum(a: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001 - mirrors numpy
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return a.tape._record(Node(a.tape, np.asarray(out, dtype=np.float64), "sum", (a,), vjp))


def mean(a: Node, axis=None) -> Node:
    count = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis), 1.0 / count)


def square(a: Node) -> Node:
    av = a.value
    return a.tape._record(Node(a.tape, av * av, "square", (a,), lambda g: (2.0 * av * g,)))


# ---------------------------------------------------------------------------
# functional front end


GraphFn = Callable[[Mapping[str, Node], Mapping[str, Node]], Node]


def forward(graph: GraphFn, params: Mapping[str, np.ndarray], inputs: Optional[Mapping[str, np.ndarray]] = None):
    """Evaluate ``graph(param_nodes, input_nodes)`` on a fresh tape.

    Returns ``(output_node, tape)``.
    """
    tape = Tape()
    pn = {k: tape.param(v, k) for k, v in params.items()}
    xn = {k: tape.const(v) for k, v in (inputs or {}).items()}
    out = graph(pn, xn)
    if not isinstance(out, Node) or out.tape is not tape:
        raise TypeError("graph must return a Node recorded on the supplied tape")
    return out, tape


def backward(tape: Tape, output: Optional[Node] = None, seed=None) -> dict[str, np.ndarray]:
    if output is None:
        if not tape.nodes:
            raise RuntimeError("backward called before a forward pass was recorded on this tape")
        output = tape.nodes[-1]
    return tape.backward(output, seed)


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        lines = [f"{k}: {v:.3e}" for k, v in self.errors.items()]
        return f"gradient check ({'pass' if self.passed else 'FAIL'} @ {self.tolerance:g}): " + ", ".join(lines)


def finite_diff_check(
    graph: GraphFn,
    params: Mapping[str, np.ndarray],
    inputs: Optional[Mapping[str, np.ndarray]] = None,
    tolerance: float = 1e-4,
    h: float = 1e-5,
) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar graph with central differences.

    The error of a parameter block is ``max|g_ad - g_fd| / max(max|g_fd|, 1e-12)``,
    i.e. relative to the block's largest numerical gradient entry. A block
    passes when its error is strictly below ``tolerance``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out, tape = forward(graph, params, inputs)
    if out.value.size != 1:
        raise ShapeError(f"finite_diff_check: graph output must be scalar, got shape {out.shape}")
    grads = tape.backward(out)

    def value(p):
        o, _ = forward(graph, p, inputs)
        return float(o.value)

    report = GradCheckReport(tolerance)
    for name, base in params.items():
        num = np.zeros_like(base)
        flat = base.reshape(-1)
        for k in range(flat.size):
            keep = flat[k]
            flat[k] = keep + h
            up = value(params)
            flat[k] = keep - h
            down = value(params)
            flat[k] = keep
            num.reshape(-1)[k] = (up - down) / (2.0 * h)
        scale = max(float(np.max(np.abs(num), initial=0.0)), 1e-12)
        report.errors[name] = float(np.max(np.abs(grads[name] - num), initial=0.0)) / scale
    return report
