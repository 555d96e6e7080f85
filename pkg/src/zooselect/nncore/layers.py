"""Dense and bidirectional-LSTM forward passes over the autodiff tape."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, NonFiniteError
from .params import ParameterSet
from .tensor import Tensor, concat


def _check_finite(name: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")


def dense_forward(x: Tensor, params: ParameterSet, layer_name: str) -> Tensor:
    """x @ W + b for layer ``layer_name`` (W: in x out, b: out)."""
    w = params[f"{layer_name}.w"]
    b = params[f"{layer_name}.b"]
    if x.data.shape[-1] != w.data.shape[0]:
        raise DimensionError(
            f"dense {layer_name!r}: input shape {x.data.shape} does not match weight shape {w.data.shape}"
        )
    _check_finite(f"dense {layer_name!r} input", x.data)
    return x @ w + b


def lstm_step(x: Tensor, h: Tensor, c: Tensor, params: ParameterSet, cell: str,
              hidden: int) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; gate layout [input, forget, candidate, output]."""
    z = x @ params[f"{cell}.wx"] + h @ params[f"{cell}.wh"] + params[f"{cell}.b"]
    i = z.narrow(0, hidden).sigmoid()
    f = z.narrow(hidden, 2 * hidden).sigmoid()
    g = z.narrow(2 * hidden, 3 * hidden).tanh()
    o = z.narrow(3 * hidden, 4 * hidden).sigmoid()
    c_next = f * c + i * g
    h_next = o * c_next.tanh()
    return h_next, c_next


def bilstm_forward(sequence: list[Tensor], params: ParameterSet,
                   cell_name: str) -> tuple[list[Tensor], Tensor]:
    """Run the shared forward and backward cells over ``sequence``.

    Returns per-step states (forward and backward halves concatenated,
    each of width 2H) and the final state: forward state after the last
    element joined with backward state after the first.
    """
    if not sequence:
        raise DimensionError("bilstm_forward on an empty sequence")
    input_dim = params[f"{cell_name}.fw.wx"].data.shape[0]
    hidden = params[f"{cell_name}.fw.wh"].data.shape[0]
    for t, x in enumerate(sequence):
        if x.data.shape != (input_dim,):
            raise DimensionError(
                f"bilstm {cell_name!r}: step {t} has shape {x.data.shape}, expected ({input_dim},)"
            )
        _check_finite(f"bilstm {cell_name!r} input step {t}", x.data)

    def run(cell: str, steps: list[Tensor]) -> list[Tensor]:
        h = Tensor(np.zeros(hidden))
        c = Tensor(np.zeros(hidden))
        states = []
        for x in steps:
            h, c = lstm_step(x, h, c, params, cell, hidden)
            states.append(h)
        return states

    fwd = run(f"{cell_name}.fw", sequence)
    bwd_rev = run(f"{cell_name}.bw", sequence[::-1])
    bwd = bwd_rev[::-1]  # bwd[t] = backward-direction state at position t
    per_step = [concat([fwd[t], bwd[t]]) for t in range(len(sequence))]
    final = concat([fwd[-1], bwd[0]])
    return per_step, final
