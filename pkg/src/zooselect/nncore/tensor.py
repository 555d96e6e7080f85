"""Tape-based reverse-mode automatic differentiation on float64 arrays.

Every operation records its inputs and a closure that propagates the
output gradient back to them.  ``backward`` walks the recorded graph
once, in reverse topological order, accumulating gradients into each
tensor that asked for them.  One graph serves one loss: calling
``backward`` twice on the same root raises instead of silently doubling
the accumulated gradients, and parameter gradients are reset explicitly
(see ``ParameterSet.zero_grads`` / ``adam_step``).
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from ..errors import DegenerateVectorError, DimensionError, DoubleBackwardError

NORM_FLOOR = 1e-12


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop",
                 "_backward_ran", "_touched")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backprop = None
        self._backward_ran = False
        # True once a backward pass accumulated into this tensor (even a
        # zero contribution); distinguishes "populated" from "never ran".
        self._touched = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ---------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g
        self._touched = True

    def _record(self, parents: tuple["Tensor", ...], backprop) -> None:
        # Constant subgraphs carry no closures; they are skipped entirely.
        if any(p.requires_grad for p in parents):
            self.requires_grad = True
            self._parents = parents
            self._backprop = backprop

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        out = Tensor(self.data + other.data)

        def backprop(g):
            if self.requires_grad:
                self._accumulate(_sum_to_shape(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_sum_to_shape(g, other.data.shape))

        out._record((self, other), backprop)
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data)

        def backprop(g):
            self._accumulate(-g)

        out._record((self,), backprop)
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        out = Tensor(self.data * other.data)

        def backprop(g):
            if self.requires_grad:
                self._accumulate(_sum_to_shape(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_sum_to_shape(g * self.data, other.data.shape))

        out._record((self, other), backprop)
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "Tensor":
        return self * (1.0 / float(scalar))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if self.data.ndim not in (1, 2) or other.data.ndim != 2:
            raise DimensionError(
                f"matmul supports vector/matrix @ matrix, got {self.data.shape} @ {other.data.shape}"
            )
        if self.data.shape[-1] != other.data.shape[0]:
            raise DimensionError(
                f"matmul inner dimensions differ: {self.data.shape} @ {other.data.shape}"
            )
        out = Tensor(self.data @ other.data)

        def backprop(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                if self.data.ndim == 1:
                    other._accumulate(np.outer(self.data, g))
                else:
                    other._accumulate(self.data.T @ g)

        out._record((self, other), backprop)
        return out

    # -- nonlinearities ----------------------------------------------------------

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = Tensor(y)

        def backprop(g):
            self._accumulate(g * (1.0 - y * y))

        out._record((self,), backprop)
        return out

    def sigmoid(self) -> "Tensor":
        # Split by sign so exp never overflows.
        y = np.where(self.data >= 0,
                     1.0 / (1.0 + np.exp(-np.clip(self.data, 0, None))),
                     np.exp(np.clip(self.data, None, 0)) / (1.0 + np.exp(np.clip(self.data, None, 0))))
        out = Tensor(y)

        def backprop(g):
            self._accumulate(g * y * (1.0 - y))

        out._record((self,), backprop)
        return out

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0))

        def backprop(g):
            self._accumulate(g * (self.data > 0.0))

        out._record((self,), backprop)
        return out

    # -- reductions and reshaping ---------------------------------------------

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum())

        def backprop(g):
            self._accumulate(np.full_like(self.data, float(g)))

        out._record((self,), backprop)
        return out

    def mean(self) -> "Tensor":
        return self.sum() / self.data.size

    def narrow(self, lo: int, hi: int) -> "Tensor":
        """Contiguous slice [lo, hi) along the last axis."""
        out = Tensor(self.data[..., lo:hi])

        def backprop(g):
            full = np.zeros_like(self.data)
            full[..., lo:hi] = g
            self._accumulate(full)

        out._record((self,), backprop)
        return out


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo numpy broadcasting: reduce gradient ``g`` back to ``shape``."""
    g = np.asarray(g, dtype=np.float64)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors along their only axis."""
    parts = list(parts)
    if not parts:
        raise DimensionError("concat of an empty sequence")
    for p in parts:
        if p.data.ndim != 1:
            raise DimensionError(f"concat expects 1-D tensors, got shape {p.data.shape}")
    out = Tensor(np.concatenate([p.data for p in parts]))
    offsets = np.cumsum([0] + [p.data.size for p in parts])

    def backprop(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    out._record(tuple(parts), backprop)
    return out


def add_n(parts: Iterable[Tensor]) -> Tensor:
    """Sum a sequence of same-shaped tensors."""
    parts = list(parts)
    if not parts:
        raise DimensionError("add_n of an empty sequence")
    acc = parts[0]
    for p in parts[1:]:
        acc = acc + p
    return acc


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """cos(u, v), clamped to [-1, 1] against rounding drift.

    Raises ``DegenerateVectorError`` when either norm falls at or below
    ``NORM_FLOOR``; zero vectors have no direction to compare.
    """
    u = _as_tensor(u)
    v = _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise DimensionError(f"cosine expects 1-D vectors, got {u.data.shape} and {v.data.shape}")
    if u.data.shape != v.data.shape:
        raise DimensionError(f"cosine operands differ in shape: {u.data.shape} vs {v.data.shape}")
    nu = float(np.linalg.norm(u.data))
    nv = float(np.linalg.norm(v.data))
    if nu <= NORM_FLOOR or nv <= NORM_FLOOR:
        raise DegenerateVectorError(
            f"cosine of a degenerate vector (norms {nu:.3e}, {nv:.3e}, floor {NORM_FLOOR:.0e})"
        )
    c = float(np.dot(u.data, v.data) / (nu * nv))
    c = min(1.0, max(-1.0, c))
    out = Tensor(c)

    def backprop(g):
        g = float(g)
        if u.requires_grad:
            u._accumulate(g * (v.data / (nu * nv) - c * u.data / (nu * nu)))
        if v.requires_grad:
            v._accumulate(g * (u.data / (nu * nv) - c * v.data / (nv * nv)))

    out._record((u, v), backprop)
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Parents-first ordering of the subgraph reachable from ``root``.

    Iterative on an explicit stack: recorded graphs routinely chain
    through hundreds of LSTM steps, which would overflow Python's
    recursion limit.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate gradients of everything ``loss`` depends on.

    The root must be scalar.  A second call on the same root raises
    ``DoubleBackwardError``: the tape has already been consumed and
    re-running it would double-count every accumulation.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._backward_ran:
        raise DoubleBackwardError("backward called twice on the same loss without a gradient reset")
    loss._backward_ran = True
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(_topo_order(loss)):
        if node._backprop is not None:
            node._backprop(node.grad)
