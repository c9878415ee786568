"""Tensor value type and the gradient tape that records differentiable ops."""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float32

_active_tape: contextvars.ContextVar[Optional["GradTape"]] = contextvars.ContextVar(
    "segdistill_active_tape", default=None
)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Tensor:
    """Dense channel-last array with an optional gradient record.

    ``data`` is a contiguous numpy array (float32 unless explicitly created
    otherwise). Tensors produced by ops are treated as immutable; only the
    optimizer and explicit parameter loading write into parameter tensors.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else _infer_dtype(data))
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.mul(as_tensor(other, like=self), -1.0))

    def sum(self) -> "Tensor":
        from . import ops

        return ops.sum_all(self)

    def mean(self) -> "Tensor":
        from . import ops

        return ops.mean_all(self)


def _infer_dtype(data):
    if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
        return data.dtype
    return DTYPE


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else DTYPE
    return Tensor(np.asarray(value, dtype=dtype))


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class GradTape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; every op run inside the block whose inputs
    need gradients appends a record. Records are appended in execution
    order, which is a valid topological order.
    """

    records: list[TapeRecord] = field(default_factory=list)
    _token: object = None

    def __enter__(self) -> "GradTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        return backward(self, loss)


def active_tape() -> GradTape | None:
    return _active_tape.get()


def record(op: str, inputs: Sequence[Tensor], output: Tensor, backward_fn) -> Tensor:
    """Attach ``output`` to the active tape when any input needs a gradient."""
    if any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape = _active_tape.get()
        if tape is not None:
            tape.records.append(TapeRecord(op, tuple(inputs), output, backward_fn))
    return output


def backward(tape: GradTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape`` from a scalar ``loss``.

    Returns a map from every reachable ``requires_grad`` tensor to its
    accumulated gradient. Leaf tensors (those not produced on the tape) also
    get the result accumulated into ``.grad``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(r.output) for r in tape.records}
    if id(loss) not in produced and not loss.requires_grad:
        raise ValueError("loss is not on the tape and does not require grad")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    seen: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g = grads.get(id(rec.output))
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(
                    f"backward of {rec.op} produced grad {gi.shape} for input {t.shape}"
                )
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                seen[key] = t

    result: dict[Tensor, np.ndarray] = {}
    for key, t in seen.items():
        if not t.requires_grad:
            continue
        g = grads[key].astype(t.dtype, copy=False)
        result[t] = g
        if key not in produced:
            t.grad = g if t.grad is None else t.grad + g
    return result
