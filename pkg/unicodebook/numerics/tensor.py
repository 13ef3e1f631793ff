"""
Dense tensors with tape-based reverse-mode differentiation.

Every primitive applied to a tensor that requires gradients is appended to
the calling thread's tape. ``backward`` replays that tape in reverse order,
accumulates gradients into the trainable leaves and clears the tape.
"""

from __future__ import annotations

import threading
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any

import numpy as np

from unicodebook.domain.errors import ShapeMismatchError, UsageError

DTYPE = np.float64


@dataclass(slots=True)
class TapeEntry:
    function: Function
    inputs: tuple[Tensor, ...]
    output: Tensor


class ComputationTape:
    """Ordered record of primitive applications for one backward pass."""

    def __init__(self) -> None:
        self._entries: list[TapeEntry] = []
        self._outputs: set[int] = set()

    def record(self, entry: TapeEntry) -> None:
        self._entries.append(entry)
        self._outputs.add(id(entry.output))

    def contains(self, tensor: Tensor) -> bool:
        return id(tensor) in self._outputs

    def entries(self) -> Sequence[TapeEntry]:
        return self._entries

    def clear(self) -> None:
        self._entries.clear()
        self._outputs.clear()

    def __len__(self) -> int:
        return len(self._entries)


class _ThreadState(threading.local):
    def __init__(self) -> None:
        self.tape = ComputationTape()
        self.grad_enabled = True


_state = _ThreadState()


def current_tape() -> ComputationTape:
    return _state.tape


def grad_enabled() -> bool:
    return _state.grad_enabled


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording anything on the tape."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def reset_tape() -> None:
    """Drop any entries left by a forward pass that never reached backward."""
    _state.tape.clear()


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
    ) -> None:
        self.data = np.array(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    # ── Introspection ─────────────────────────────────

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError("item", self.shape, ())
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"<Tensor shape={self.shape}{label} requires_grad={self.requires_grad}>"

    # ── Operators ─────────────────────────────────────

    def __add__(self, other: Any) -> Tensor:
        return F.add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return F.add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return F.sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return F.sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return F.mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return F.mul(other, self)

    def __truediv__(self, other: float) -> Tensor:
        if isinstance(other, Tensor):
            raise UsageError("Division is only defined by Python scalars")
        return F.mul(self, 1.0 / other)

    def __neg__(self) -> Tensor:
        return F.neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return F.matmul(self, other)

    def __getitem__(self, key: Any) -> Tensor:
        return F.index(self, key)

    def sum(self, axis: int | tuple[int, ...] | None = None) -> Tensor:
        return F.sum(self, axis=axis)

    def mean(self) -> Tensor:
        return F.mean(self)

    def reshape(self, *shape: int) -> Tensor:
        return F.reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return F.transpose(self, axes or None)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    """One primitive: array-level forward plus a backward giving one gradient per input."""

    name = "function"

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Any, **params: Any) -> Tensor:
        fn = cls(**params)
        tensors = tuple(as_tensor(x) for x in inputs)
        out = Tensor(fn.forward(*(t.data for t in tensors)))
        if grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out.is_leaf = False
            _state.tape.record(TapeEntry(fn, tensors, out))
        return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every trainable leaf reachable from ``loss``, then clear the tape."""
    if loss.size != 1:
        raise ShapeMismatchError("backward (loss must be scalar)", loss.shape, ())
    tape = _state.tape
    if not loss.requires_grad or not tape.contains(loss):
        raise UsageError("backward: loss was not produced by a recorded computation")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for entry in reversed(tape.entries()):
            grad = pending.pop(id(entry.output), None)
            if grad is None:
                continue
            input_grads = entry.function.backward(grad)
            for tensor, g in zip(entry.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
                else:
                    key = id(tensor)
                    pending[key] = g if key not in pending else pending[key] + g
    finally:
        tape.clear()


# Primitives reference Tensor and Function, so they are bound after both exist.
from unicodebook.numerics import functional as F  # noqa: E402
