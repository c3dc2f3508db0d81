"""Small reverse-mode autodiff engine over 2-D float64 arrays.

Every value is a :class:`Tensor` holding a 2-D array.  Operations build a
graph of parent references; :func:`backward` sorts that graph into a tape
(parents before children) and walks it in reverse, accumulating adjoints.

Broadcasting is deliberately narrow: a 1x1 tensor (or Python scalar) can be
combined with anything, and a 1xC row can be added to an RxC matrix (bias
addition).  Everything else must match exactly.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("_data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"Tensor must be at most 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = _backward
        self.op = op

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self._data[0, 0])

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self._data)

    def zero_grad(self) -> None:
        self.grad = None

    def assign(self, values: np.ndarray) -> None:
        """Replace the stored values of a leaf (used by optimizers)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.shape:
            raise DimensionError(f"cannot assign {values.shape} into tensor of shape {self.shape}")
        if self._parents:
            raise ContractError("only leaf tensors can be assigned")
        arr = values.copy()
        arr.setflags(write=False)
        self._data = arr

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _make(data, parents, backward, op) -> Tensor:
    return Tensor(data, requires_grad=_needs_grad(*parents), _parents=parents, _backward=backward, op=op)


# ---------------------------------------------------------------- broadcasting


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape == (1, 1):
        return grad.sum(keepdims=True)
    if shape[0] == 1 and shape[1] == grad.shape[1]:
        return grad.sum(axis=0, keepdims=True)
    raise DimensionError(f"cannot reduce gradient {grad.shape} to {shape}")


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == (1, 1) or sb == (1, 1):
        return
    if op in ("add", "sub") and sb[0] == 1 and sb[1] == sa[1]:
        return
    if op in ("add",) and sa[0] == 1 and sa[1] == sb[1]:
        return
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


# ---------------------------------------------------------------- binary ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _make(A @ B, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    A, B = a.data, b.data

    def backward(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _make(A * B, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    A, B = a.data, b.data
    zero = np.argwhere(B == 0.0)
    if zero.size:
        raise DomainError(f"div: zero denominator at index {tuple(int(i) for i in zero[0])}")
    out = A / B

    def backward(g):
        return _unbroadcast(g / B, A.shape), _unbroadcast(-g * out / B, B.shape)

    return _make(out, (a, b), backward, "div")


# ---------------------------------------------------------------- unary ops


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    A = a.data
    bad = np.argwhere(~(A > 0.0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise DomainError(f"log: non-positive operand {A[idx]!r} at index {idx}")
    return _make(np.log(A), (a,), lambda g: (g / A,), "log")


def square(a: Tensor) -> Tensor:
    a = as_tensor(a)
    A = a.data
    return _make(A * A, (a,), lambda g: (2.0 * A * g,), "square")


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    A = a.data
    bad = np.argwhere(~(A > 0.0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise DomainError(f"sqrt: non-positive operand {A[idx]!r} at index {idx}")
    out = np.sqrt(A)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


_UNARY = {"tanh": tanh, "exp": exp, "log": log, "square": square, "sqrt": sqrt}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name, e.g. ``elementwise("mul", x, y)``."""
    if op in _UNARY:
        if len(args) != 1:
            raise ContractError(f"{op} takes one operand, got {len(args)}")
        return _UNARY[op](args[0])
    if op in _BINARY:
        if len(args) != 2:
            raise ContractError(f"{op} takes two operands, got {len(args)}")
        return _BINARY[op](*args)
    raise ContractError(f"unknown elementwise op {op!r}")


def reduce_sum(t: Tensor, axis: str = "all") -> Tensor:
    """Sum over ``"rows"`` (collapse rows -> 1xC), ``"cols"`` (-> Rx1) or ``"all"``."""
    t = as_tensor(t)
    shape = t.shape
    if axis == "all":
        out = t.data.sum(keepdims=True)
    elif axis == "rows":
        out = t.data.sum(axis=0, keepdims=True)
    elif axis == "cols":
        out = t.data.sum(axis=1, keepdims=True)
    else:
        raise ContractError(f"reduce_sum: axis must be rows, cols or all, got {axis!r}")
    return _make(out, (t,), lambda g: (np.broadcast_to(g, shape),), "sum")


# ---------------------------------------------------------------- tape


def build_tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that need gradients, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients accumulate across calls; use :func:`zero_grad` between steps.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got shape {loss.shape}")
    tape = build_tape(loss)
    adj: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(tape):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adj[key] = pg if key not in adj else adj[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
