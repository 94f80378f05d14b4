"""Array values with gradient slots and the tape that records operations on them."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import UsageError

DEFAULT_DTYPE = np.float32


class NDValue:
    """A numeric array plus an optional gradient of the same shape.

    Leaves created by the user (parameters, inputs) have ``requires_grad`` set
    explicitly. Values produced by a recorded operation inherit
    ``requires_grad`` from their inputs and are never leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "NDValue":
        """Same data, cut from the graph. Gradients never flow through it."""
        return NDValue(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"NDValue(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from .ops import add
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        from .ops import sub
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        from .ops import mul, scale
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)


def _lift(other, like: NDValue) -> NDValue:
    if isinstance(other, NDValue):
        return other
    return NDValue(np.full(like.shape, other, dtype=like.dtype))


def _not_scalar(v: NDValue):
    raise UsageError(f"item() needs a single-element value, got shape {v.shape}")


@dataclass
class Record:
    inputs: tuple[NDValue, ...]
    output: NDValue
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str = ""


@dataclass
class Tape:
    """Ordered log of executed operations.

    Use as a context manager; every differentiable op run inside the block
    whose inputs require gradients appends one record. Execution order is a
    valid topological order, so backward just walks the list in reverse.
    """

    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


_local = threading.local()


def _stack() -> list[Tape]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def record(name: str, inputs: Sequence[NDValue], out_data: np.ndarray, backward_fn) -> NDValue:
    """Wrap ``out_data`` as an op output and log it on the active tape if needed."""
    needs = any(v.requires_grad for v in inputs)
    out = NDValue(out_data, requires_grad=False)
    tape = active_tape()
    if needs and tape is not None:
        out.requires_grad = True
        out.is_leaf = False
        tape.records.append(Record(tuple(inputs), out, backward_fn, name))
    return out


def backward(output: NDValue, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad leaf that ``output`` depends on.

    Leaf gradients accumulate across calls; clear them with ``zero_grad``.
    Intermediate gradients are kept only for the duration of the sweep.
    """
    if output.data.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad or output.is_leaf:
        raise UsageError("output was not produced by a recorded operation on this tape")
    pending: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    found = False
    for rec in reversed(tape.records):
        g = pending.pop(id(rec.output), None)
        if g is None:
            continue
        found = True
        grads = rec.backward(g)
        for inp, gi in zip(rec.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                gi = np.asarray(gi, dtype=inp.data.dtype).reshape(inp.shape)
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi
    if not found:
        raise UsageError("output is not reachable from the given tape")
