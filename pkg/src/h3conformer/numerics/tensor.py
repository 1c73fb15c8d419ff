"""Dense tensors with tape-based reverse-mode differentiation.

A :class:`GradTape` records every differentiable operation executed while it
is active.  ``tape.backward(loss)`` replays the record in reverse and leaves
``.grad`` on every ``requires_grad`` leaf that the loss depends on.  With no
active tape nothing is recorded, which is the inference fast path.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class TapeError(RuntimeError):
    pass


_ACTIVE_TAPES: list["GradTape"] = []


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op}")


class Tensor:
    """An n-dimensional array, optionally tracked for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind in "biu":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar, implemented in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __pow__(self, p: float):
        from . import ops
        return ops.power(self, p)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("out", "inputs", "backward", "op")

    def __init__(self, out: Tensor, inputs: tuple, backward: BackwardFn, op: str):
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.op = op


class GradTape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes all record.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "GradTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, node: _Node) -> None:
        self.nodes.append(node)
        self._outputs.add(id(node.out))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def is_recording() -> bool:
    return bool(_ACTIVE_TAPES)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(op: str, out_data: np.ndarray, inputs: tuple, backward_fn: BackwardFn) -> Tensor:
    """Wrap ``out_data`` and, when a tape is active, record how to differentiate it.

    ``backward_fn(g)`` returns one gradient (or None) per entry of ``inputs``.
    """
    _check_finite(out_data, op)
    if _ACTIVE_TAPES and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        out = Tensor(out_data, requires_grad=True)
        node = _Node(out, inputs, backward_fn, op)
        for tape in _ACTIVE_TAPES:
            tape._push(node)
        return out
    return Tensor(out_data)


def backward(tape: GradTape, loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``."""
    if loss.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
    if id(loss) not in tape._outputs:
        raise TapeError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in tape._outputs:
                leaves[key] = inp
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for key, leaf in leaves.items():
        g = grads[key]
        if g.shape != leaf.shape:
            g = np.broadcast_to(g, leaf.shape).copy()
        leaf.grad = g if leaf.grad is None else leaf.grad + g
