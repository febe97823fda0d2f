"""Dense float64 matrices with a tape-based reverse-mode autodiff engine.

Every value is a 2-D ``numpy.ndarray`` of dtype float64. Operations take
:class:`Node` objects (or plain arrays, which are treated as constants) and
record themselves on the tape owning their node arguments. There is no
broadcasting: shapes are checked explicitly and mismatches raise
:class:`DimensionError`.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence, Union

import numpy as np

Matrix = np.ndarray


class DimensionError(ValueError):
    """Operand shapes do not line up."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def as_matrix(value) -> Matrix:
    m = np.asarray(value, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    return m


class Node:
    __slots__ = ("value", "grad", "parents", "backward_rule", "requires_grad", "name", "tape")

    def __init__(self, tape: Tape, value: Matrix, parents: tuple = (), backward_rule=None,
                 requires_grad: bool = False, name: str | None = None):
        if not np.isfinite(value).all():
            op = name or getattr(backward_rule, "__qualname__", "leaf")
            raise NonFiniteError(f"non-finite value produced by {op}")
        self.tape = tape
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = parents
        self.backward_rule = backward_rule
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        label = self.name or "node"
        return f"Node({label}, shape={self.shape})"


class Tape:
    """Nodes in creation order; creation order is a valid topological order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def parameter(self, value, name: str | None = None) -> Node:
        node = Node(self, as_matrix(value).copy(), requires_grad=True, name=name)
        self.nodes.append(node)
        return node

    def constant(self, value, name: str | None = None) -> Node:
        node = Node(self, as_matrix(value), name=name)
        self.nodes.append(node)
        return node

    def _record(self, value: Matrix, parents: tuple[Node, ...], rule, name: str) -> Node:
        needs = any(p.requires_grad for p in parents)
        node = Node(self, value, parents, rule if needs else None, needs, name)
        self.nodes.append(node)
        return node

    def parameters(self) -> list[Node]:
        return [n for n in self.nodes if n.requires_grad and not n.parents]

    def zero_grad(self) -> None:
        for n in self.nodes:
            n.grad = np.zeros_like(n.value)


Operand = Union[Node, np.ndarray, float, Sequence]


def _lift(*args: Operand) -> tuple[Tape, list[Node]]:
    tape = next((a.tape for a in args if isinstance(a, Node) and a.requires_grad), None)
    if tape is None:
        tape = next((a.tape for a in args if isinstance(a, Node)), None) or Tape()
    nodes = []
    for a in args:
        if isinstance(a, Node):
            if a.tape is not tape:
                if a.requires_grad:
                    raise ContractError("operands belong to different tapes")
                a = tape.constant(a.value)
            nodes.append(a)
        else:
            nodes.append(tape.constant(a))
    return tape, nodes


def matmul(a: Operand, b: Operand) -> Node:
    tape, (a, b) = _lift(a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def rule(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return tape._record(av @ bv, (a, b), rule, "matmul")


def add(a: Operand, b: Operand) -> Node:
    tape, (a, b) = _lift(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return tape._record(a.value + b.value, (a, b), lambda g: (g, g), "add")


def scale(a: Operand, c: float) -> Node:
    tape, (a,) = _lift(a)
    c = float(c)
    return tape._record(a.value * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Operand) -> Node:
    tape, (a,) = _lift(a)
    mask = a.value > 0.0  # subgradient 0 at exactly 0
    return tape._record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def row_softmax(a: Operand) -> Node:
    tape, (a,) = _lift(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return tape._record(s, (a,), rule, "row_softmax")


def fold_sum(a: Operand, parts: int) -> Node:
    """Split the rows into ``parts`` equal contiguous blocks and add the blocks.

    A ``(parts*k) x d`` input gives a ``k x d`` output. With ``parts`` equal to
    the row count this is the column-wise total.
    """
    tape, (a,) = _lift(a)
    rows, cols = a.shape
    if parts < 1 or rows % parts:
        raise DimensionError(f"fold_sum: {rows} rows do not split into {parts} blocks")
    k = rows // parts
    out = a.value.reshape(parts, k, cols).sum(axis=0)
    return tape._record(out, (a,), lambda g: (np.tile(g, (parts, 1)),), "fold_sum")


def row_sum(a: Operand) -> Node:
    """n x d -> 1 x d column totals."""
    rows = a.shape[0] if isinstance(a, Node) else as_matrix(a).shape[0]
    return fold_sum(a, rows)


def vstack(items: Sequence[Operand]) -> Node:
    if not items:
        raise ContractError("vstack of nothing")
    tape, nodes = _lift(*items)
    cols = {n.shape[1] for n in nodes}
    if len(cols) != 1:
        raise DimensionError(f"vstack: column counts differ {[n.shape for n in nodes]}")
    bounds = np.cumsum([0] + [n.shape[0] for n in nodes])

    def rule(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(nodes)))

    return tape._record(np.vstack([n.value for n in nodes]), tuple(nodes), rule, "vstack")


def kron_identity(a: Operand, k: int) -> Node:
    """``kron(a, I_k)``: each entry of ``a`` becomes a scaled k x k identity block."""
    tape, (a,) = _lift(a)
    r, c = a.shape
    out = np.kron(a.value, np.eye(k))

    def rule(g):
        return (np.einsum("ipjp->ij", g.reshape(r, k, c, k)),)

    return tape._record(out, (a,), rule, "kron_identity")


def pick_neglog_mean(probs: Operand, labels: Sequence[int], floor: float = 1e-12) -> Node:
    """Mean over rows of ``-ln(max(probs[b, labels[b]], floor))`` as a 1x1 node."""
    tape, (p,) = _lift(probs)
    labels = np.asarray(labels, dtype=np.intp)
    rows, cols = p.shape
    if labels.shape != (rows,):
        raise DimensionError(f"need one label per row: {rows} rows, {labels.shape} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= cols):
        raise ContractError(f"label outside [0, {cols})")
    idx = np.arange(rows)
    picked = p.value[idx, labels]
    clipped = np.maximum(picked, floor)
    loss = float(np.mean(-np.log(clipped)))

    def rule(g):
        out = np.zeros_like(p.value)
        live = picked > floor
        out[idx[live], labels[live]] = -g[0, 0] / (rows * picked[live])
        return (out,)

    return tape._record(np.array([[loss]]), (p,), rule, "cross_entropy")


def backward(tape: Tape, loss: Node) -> dict[Node, Matrix]:
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every parameter leaf.

    Intermediate adjoints live only for this call, so running backward twice
    on the same tape adds the leaf gradients twice.
    """
    if loss.tape is not tape:
        raise ContractError("loss node is not on this tape")
    if loss.shape != (1, 1):
        raise ContractError(f"loss must be 1x1, got {loss.shape}")
    adjoint: dict[int, Matrix] = {id(loss): np.ones((1, 1))}
    for node in reversed(tape.nodes):
        g = adjoint.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if not node.parents:
            node.grad = node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adjoint[key] = adjoint[key] + pg if key in adjoint else pg
    return {n: n.grad for n in tape.parameters()}


ScalarFn = Callable[[Tape, Mapping[str, Node]], Node]


def grad_check_report(f: ScalarFn, params: Mapping[str, Matrix],
                      eps: float = 1e-5) -> dict[str, float]:
    """Max relative error between autodiff and central differences, per parameter."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    base = {k: as_matrix(v).copy() for k, v in params.items()}

    tape = Tape()
    leaves = {k: tape.parameter(v, name=k) for k, v in base.items()}
    backward(tape, f(tape, leaves))

    def evaluate(vals):
        t = Tape()
        return float(f(t, {k: t.constant(v, name=k) for k, v in vals.items()}).value[0, 0])

    report = {}
    for name, value in base.items():
        analytic = leaves[name].grad
        worst = 0.0
        for idx in np.ndindex(value.shape):
            plus = dict(base)
            minus = dict(base)
            plus[name] = value.copy()
            minus[name] = value.copy()
            plus[name][idx] += eps
            minus[name][idx] -= eps
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
        report[name] = worst
    return report


def grad_check(f: ScalarFn, params: Mapping[str, Matrix], eps: float = 1e-5) -> float:
    report = grad_check_report(f, params, eps)
    return max(report.values(), default=0.0)
