"""Reverse-mode automatic differentiation over dense float64 tensors.

The tape is dynamic: every forward pass builds fresh ``GraphNode`` objects
whose ``backward_rule`` closures map the upstream gradient to one
contribution per parent. Gradients accumulate (``+=``) into ``.grad`` until
``zero_grad`` is called, which lets callers inject gradients computed
outside the tape (see ``inject_grad``).
"""

from collections.abc import Sequence
from typing import Callable, Optional, Union

import numpy as np
import numpy.typing as npt

from .errors import ContractError, DimensionError, NumericalError

Tensor = npt.NDArray[np.float64]
BackwardRule = Callable[[Tensor], Sequence[Optional[Tensor]]]
ArrayLike = Union[Tensor, Sequence[float], Sequence[Sequence[float]], float]


class GraphNode:
    """One value on the tape together with its accumulated gradient."""

    __slots__ = (
        "value",
        "grad",
        "parents",
        "backward_rule",
        "requires_grad",
        "name",
        "adam_m",
        "adam_v",
    )

    def __init__(
        self,
        value: ArrayLike,
        parents: Sequence["GraphNode"] = (),
        backward_rule: Optional[BackwardRule] = None,
        requires_grad: bool = False,
        name: str = "",
    ):
        self.value: Tensor = np.asarray(value, dtype=np.float64)
        self.grad: Tensor = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.backward_rule = backward_rule
        self.requires_grad = requires_grad
        self.name = name
        self.adam_m: Optional[Tensor] = None
        self.adam_v: Optional[Tensor] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"GraphNode{label}(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(value: ArrayLike, name: str = "") -> GraphNode:
    """Create a trainable leaf."""
    node = GraphNode(np.array(value, dtype=np.float64), requires_grad=True, name=name)
    _check_finite(node.value, name or "parameter")
    return node


def constant(value: ArrayLike, name: str = "") -> GraphNode:
    """Create a leaf that never receives gradients."""
    return GraphNode(value, requires_grad=False, name=name)


def _check_finite(value: Tensor, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value produced by {op}")


def _make(value: Tensor, parents: Sequence[GraphNode], rule: BackwardRule, op: str) -> GraphNode:
    _check_finite(value, op)
    if not any(p.requires_grad for p in parents):
        return GraphNode(value, name=op)
    return GraphNode(value, parents=parents, backward_rule=rule, requires_grad=True, name=op)


def _unbroadcast(grad: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: GraphNode, b: GraphNode) -> GraphNode:
    """Elementwise sum with numpy broadcasting (used for row-vector biases)."""
    try:
        value = a.value + b.value
    except ValueError as e:
        raise DimensionError(f"add: cannot broadcast {a.shape} and {b.shape}") from e

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(value, (a, b), rule, "add")


def mul(a: GraphNode, b: GraphNode) -> GraphNode:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    try:
        value = a.value * b.value
    except ValueError as e:
        raise DimensionError(f"mul: cannot broadcast {a.shape} and {b.shape}") from e

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _make(value, (a, b), rule, "mul")


def scale(a: GraphNode, factor: float) -> GraphNode:
    """Multiply by a fixed scalar (attention 1/sqrt(d_k), angle maps)."""

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return (g * factor,)

    return _make(a.value * factor, (a,), rule, "scale")


def matmul(a: GraphNode, b: GraphNode) -> GraphNode:
    """Matrix product of two 2-D nodes."""
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return g @ b.value.T, a.value.T @ g

    return _make(a.value @ b.value, (a, b), rule, "matmul")


def transpose(a: GraphNode) -> GraphNode:
    if a.value.ndim != 2:
        raise DimensionError(f"transpose expects a 2-D node, got {a.shape}")

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return (g.T,)

    return _make(a.value.T.copy(), (a,), rule, "transpose")


def relu(a: GraphNode) -> GraphNode:
    mask = a.value > 0

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return (g * mask,)

    return _make(a.value * mask, (a,), rule, "relu")


def tanh(a: GraphNode) -> GraphNode:
    out = np.tanh(a.value)

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return (g * (1.0 - out * out),)

    return _make(out, (a,), rule, "tanh")


def total(a: GraphNode) -> GraphNode:
    """Sum of all entries as a scalar node."""

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return (np.full(a.shape, float(g)),)

    return _make(np.asarray(a.value.sum()), (a,), rule, "sum")


def mean(a: GraphNode, axis: int) -> GraphNode:
    """Mean over one axis, keeping the reduced dimension."""
    if not -a.value.ndim <= axis < a.value.ndim:
        raise DimensionError(f"mean axis {axis} out of range for shape {a.shape}")
    count = a.shape[axis]

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(a.value.mean(axis=axis, keepdims=True), (a,), rule, "mean")


def concat(nodes: Sequence[GraphNode], axis: int) -> GraphNode:
    """Concatenate 2-D nodes along ``axis``."""
    if not nodes:
        raise ContractError("concat needs at least one node")
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: incompatible shapes {[n.shape for n in nodes]}") from e
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        return np.split(g, bounds, axis=axis)

    return _make(value, tuple(nodes), rule, "concat")


def gather_rows(a: GraphNode, indices: Sequence[int]) -> GraphNode:
    """Select rows of a 2-D node (repeats allowed)."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.value.ndim != 2:
        raise DimensionError(f"gather_rows expects a 2-D node, got {a.shape}")
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise DimensionError(f"gather_rows index out of range for {a.shape[0]} rows")

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], (a,), rule, "gather_rows")


def softmax_rows(a: GraphNode) -> GraphNode:
    """Row-wise softmax with per-row max subtraction."""
    if a.value.ndim != 2:
        raise DimensionError(f"softmax_rows expects a 2-D node, got {a.shape}")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)

    def rule(g: Tensor) -> Sequence[Optional[Tensor]]:
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), rule, "softmax_rows")


def inject_grad(node: GraphNode, upstream: ArrayLike) -> GraphNode:
    """Scalar node whose gradient w.r.t. ``node`` is exactly ``upstream``.

    Used to push gradients computed outside the tape (e.g. by the
    parameter-shift rule) back through the graph with one ``backward`` call.
    """
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != node.shape:
        up = up.reshape(node.shape)
    return total(mul(node, constant(up)))


def _topological_order(root: GraphNode) -> list[GraphNode]:
    order: list[GraphNode] = []
    visited: set[int] = set()
    stack: list[tuple[GraphNode, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: GraphNode) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every node on the tape."""
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # Upstream gradients live in a local table so that calling backward twice
    # on the same graph adds exactly one extra copy of every gradient.
    pending: dict[int, Tensor] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if node.backward_rule is None:
            continue
        for parent, contrib in zip(node.parents, node.backward_rule(g)):
            if contrib is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + contrib
            else:
                pending[key] = np.asarray(contrib, dtype=np.float64).reshape(parent.shape)


def zero_grad(params: Sequence[GraphNode]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)


def adam_step(
    params: Sequence[GraphNode],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> None:
    """Bias-corrected adaptive-moment update, in place.

    Moment buffers are stored on the nodes and persist across calls.
    """
    if t < 1:
        raise ContractError(f"adam step count must be >= 1, got {t}")
    bias1 = 1.0 - beta1**t
    bias2 = 1.0 - beta2**t
    for p in params:
        if p.adam_m is None or p.adam_v is None:
            p.adam_m = np.zeros_like(p.value)
            p.adam_v = np.zeros_like(p.value)
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * p.grad
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * p.grad * p.grad
        m_hat = p.adam_m / bias1
        v_hat = p.adam_v / bias2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        _check_finite(p.value, f"adam update of {p.name or 'parameter'}")


class Adam:
    """Stateful wrapper around ``adam_step`` that counts steps."""

    def __init__(
        self,
        params: Sequence[GraphNode],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, self.t)
