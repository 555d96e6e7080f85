"""Named parameter collections with deterministic initialization.

Every parameter is initialized by a pure function of (set seed,
parameter name, shape): the name is hashed together with the seed to
derive an independent RNG stream, so equally-shaped parameters still
get distinct values and re-creating a set with the same seed reproduces
it bit for bit.
"""
from __future__ import annotations

import hashlib

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


def derive_seed(seed: int, *tags) -> int:
    """Stable 64-bit child seed from a root seed and a tag path."""
    text = ":".join([str(int(seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags))


class ParameterSet:
    """An ordered, named collection of trainable tensors.

    Gradient buffers are allocated up front (zeros) so each parameter
    always carries exactly one buffer of matching shape.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._params: dict[str, Tensor] = {}

    # -- construction -------------------------------------------------------

    def add(self, name: str, shape: tuple[int, ...], *, bound: float | None = None) -> Tensor:
        """Add a parameter drawn uniformly from [-bound, bound] (zeros if None)."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if bound is None:
            data = np.zeros(shape, dtype=np.float64)
        else:
            rng = derive_rng(self.seed, "param", name)
            data = rng.uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True)
        t.grad = np.zeros(shape, dtype=np.float64)
        self._params[name] = t
        return t

    def add_dense(self, name: str, in_dim: int, out_dim: int) -> None:
        """Weight uniform in [-1/sqrt(in_dim), 1/sqrt(in_dim)], bias zero."""
        self.add(f"{name}.w", (in_dim, out_dim), bound=1.0 / np.sqrt(in_dim))
        self.add(f"{name}.b", (out_dim,))

    def add_bilstm(self, name: str, input_dim: int, hidden: int) -> None:
        """Forward and backward cells; gate layout [input, forget, cand, output].

        All weights and biases drawn uniformly from [-1/sqrt(H), 1/sqrt(H)],
        then the forget-gate bias slice is set to 1.0 so memory starts open.
        """
        bound = 1.0 / np.sqrt(hidden)
        for direction in ("fw", "bw"):
            self.add(f"{name}.{direction}.wx", (input_dim, 4 * hidden), bound=bound)
            self.add(f"{name}.{direction}.wh", (hidden, 4 * hidden), bound=bound)
            bias = self.add(f"{name}.{direction}.b", (4 * hidden,), bound=bound)
            bias.data[hidden:2 * hidden] = 1.0

    # -- access ---------------------------------------------------------------

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    # -- gradient state ----------------------------------------------------------

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad[...] = 0.0
            p._touched = False

    def grads_pending(self) -> bool:
        """True if any backward pass accumulated into this set since the last reset."""
        return any(p._touched for p in self._params.values())

    # -- serialization -------------------------------------------------------------

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            values = np.asarray(arrays[name], dtype=np.float64)
            if values.shape != p.data.shape:
                raise DimensionError(
                    f"parameter {name!r}: stored shape {values.shape} vs expected {p.data.shape}"
                )
            p.data = values.copy()
