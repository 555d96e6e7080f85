"""Adam with bias correction."""
from __future__ import annotations

import numpy as np

from ..errors import MissingGradientError, NonFiniteError
from .params import ParameterSet


class AdamState:
    """First/second moment buffers and step counter for one parameter set."""

    def __init__(self, params: ParameterSet, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: ParameterSet, state: AdamState) -> None:
    """One update over every parameter; gradients are consumed (zeroed).

    Requires that a backward pass populated the set since the last reset;
    stepping on never-filled buffers raises ``MissingGradientError``.
    """
    if not params.grads_pending():
        raise MissingGradientError("adam_step before any backward pass populated gradients")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        if not np.isfinite(g).all():
            raise NonFiniteError(f"gradient of {name!r} contains NaN or Inf")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    params.zero_grads()
