"""Adam with bias correction and a constant learning rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, bad_indices: np.ndarray, where: str = ""):
        first = int(bad_indices[0])
        msg = f"{bad_indices.size} non-finite gradient entries, first at index {first}"
        if where:
            msg += f" ({where})"
        super().__init__(msg)
        self.bad_indices = bad_indices


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS):
    """Update ``params`` and ``state`` in place and return both."""
    if state.m.shape != params.shape or grads.shape != params.shape:
        raise ValueError("parameter, gradient and state shapes differ")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NonFiniteGradientError(bad)
    state.t += 1
    state.m *= beta1
    state.m += (1 - beta1) * grads
    state.v *= beta2
    state.v += (1 - beta2) * grads * grads
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    params -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(params.dtype, copy=False)
    return params, state
