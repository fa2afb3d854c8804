"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations that involve at least one
tensor with ``requires_grad`` record a :class:`Node` on their output holding
the inputs and a closure mapping the output gradient to input gradients.
:func:`backward` orders the reachable nodes topologically into a
:class:`Tape`, walks it once in reverse and accumulates ``.grad`` on leaves.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ShapeError, UsageError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported default dtype {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


_BRANCH_LOG: Optional[list] = None


@contextlib.contextmanager
def record_branches() -> Iterator[list]:
    """Collect the branch masks of piecewise ops (relu, berHu) run inside."""
    global _BRANCH_LOG
    previous = _BRANCH_LOG
    _BRANCH_LOG = log = []
    try:
        yield log
    finally:
        _BRANCH_LOG = previous


def record_branch(mask: np.ndarray) -> None:
    if _BRANCH_LOG is not None:
        _BRANCH_LOG.append(np.array(mask, dtype=bool, copy=True))


class Node:
    __slots__ = ("inputs", "backward_fn", "op")

    def __init__(self, inputs: Sequence["Tensor"], backward_fn: BackwardFn, op: str):
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.op = op


class Tensor:
    """N-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", op={self._node.op}" if self._node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Arithmetic used by losses and glue code. The network primitives with
    # restricted broadcasting live in ops.py.
    def __add__(self, other):
        return _binary(self, other, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, "sub")

    def __rsub__(self, other):
        return _binary(_lift(other, self), self, "sub")

    def __mul__(self, other):
        return _binary(self, other, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by python scalars")
        return _binary(self, 1.0 / float(other), "mul")

    def __neg__(self):
        return _binary(self, -1.0, "mul")

    def sum(self) -> "Tensor":
        shape = self.shape
        return make_op(
            np.asarray(self.data.sum(), dtype=self.dtype),
            (self,),
            lambda g: (np.broadcast_to(g, shape).copy(),),
            "sum",
        )

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / self.size)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return make_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")


def _not_scalar(t: Tensor):
    raise UsageError(f"item() requires a single element, got shape {t.shape}")


def _lift(value, like: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=like.dtype))


def _binary(a: Tensor, b, op: str) -> Tensor:
    if not isinstance(b, Tensor):
        scalar = float(b)
        if op == "add":
            return make_op(a.data + a.dtype.type(scalar), (a,), lambda g: (g,), "add_scalar")
        if op == "sub":
            return make_op(a.data - a.dtype.type(scalar), (a,), lambda g: (g,), "sub_scalar")
        s = a.dtype.type(scalar)
        return make_op(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    if op == "add":
        out = ad + bd
        fn = lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape))
    elif op == "sub":
        out = ad - bd
        fn = lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape))
    else:
        out = ad * bd
        fn = lambda g: (_reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape))
    return make_op(out, (a, b), fn, op)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def make_op(out: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap ``out`` in a Tensor and record how to differentiate it.

    ``backward_fn`` receives the gradient w.r.t. ``out`` and returns one
    array (or None) per input, each shaped like that input.
    """
    result = Tensor(out)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result._node = Node(inputs, backward_fn, op)
    return result


_CONSUMED = Node((), lambda g: (), "consumed")


class Tape:
    """Operations reachable from a root, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t._node is None or t._node is _CONSUMED:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t._node.inputs:
                if parent._node not in (None, _CONSUMED) and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The graph is consumed: intermediate nodes are released afterwards, so a
    second call on the same loss raises.
    """
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor requiring grad")
    if loss._node is _CONSUMED:
        raise UsageError("graph already consumed by a previous backward()")
    tape = Tape.from_root(loss)
    grads: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype)
    }
    if loss._node is None:
        _accumulate_leaf(loss, grads[id(loss)])
        return
    for t in reversed(tape.nodes):
        g = grads.pop(id(t), None)
        node = t._node
        t._node = _CONSUMED
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for parent, pg in zip(node.inputs, input_grads):
            if pg is None or not parent.requires_grad or parent._node is _CONSUMED:
                continue
            if parent._node is None:
                _accumulate_leaf(parent, pg)
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor {t.shape}")
    g = g.astype(t.dtype, copy=False)
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad += g
