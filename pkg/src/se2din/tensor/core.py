"""Dense tensors and a reverse-mode tape.

Tensors wrap a numpy array.  Operations executed while a :class:`Tape` is
active, and which touch at least one tensor that requires a gradient, are
appended to the tape together with a closure mapping the output gradient to
input gradients.  :meth:`Tape.backward` replays those closures in exact
reverse order and accumulates leaf gradients additively.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf from finite inputs."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

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
        return self.data.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


class Parameter(Tensor):
    """Trainable tensor with a gradient buffer of identical shape."""

    __slots__ = ("trainable", "name")

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def assign(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=self.data.dtype)
        if value.shape != self.data.shape:
            raise ShapeError(f"{self.name}: {value.shape} != {self.data.shape}")
        self.data = np.ascontiguousarray(value)
        if self.grad is None or self.grad.shape != self.data.shape:
            self.grad = np.zeros_like(self.data)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nesting is allowed and the innermost tape
    records.  A tape is consumed by :meth:`backward`.
    """

    _active: list["Tape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        Tape._active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._active.remove(self)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(output, tuple(inputs), backward))

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        """Propagate ``d loss`` to every leaf that requires a gradient.

        Parameters receive ``grad += dloss/dvalue``; other leaf tensors get
        their ``grad`` attribute set.  Returns the map ``id(tensor) -> grad``
        for leaves.
        """
        if seed is None:
            if loss.data.size != 1:
                raise ShapeError("backward needs a scalar loss or an explicit seed")
            seed = np.ones_like(loss.data)
        produced = {id(n.output) for n in self.nodes}
        grads: dict[int, np.ndarray] = {id(loss): seed}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key not in produced:
                    leaves[key] = t
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        out = {}
        for key, t in leaves.items():
            g = grads[key]
            if isinstance(t, Parameter):
                t.grad = t.grad + g.astype(t.data.dtype, copy=False)
            else:
                t.grad = g if t.grad is None else t.grad + g
            out[key] = g
        self.nodes.clear()
        return out


def active_tape() -> Tape | None:
    return Tape._active[-1] if Tape._active else None


CHECK_FINITE = True


def check_finite(arr: np.ndarray, op: str) -> None:
    # one reduction pass; overflow in the sum itself also flags
    if CHECK_FINITE and not np.isfinite(arr.sum(dtype=np.float64)):
        raise NonFiniteError(f"{op}: non-finite values in output")


def make_output(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it if needed."""
    check_finite(data, op)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
