"""Adam optimizer with value-semantics state.

Used by the evidence maximization, the MMD matching loop, and both sides of
the adversarial loop.  State is immutable: each step returns fresh arrays so
that many optimizers can run concurrently without sharing anything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators and the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), t=0)


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grad: np.ndarray,
    lr: float,
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam descent step.

    Returns (new_state, new_params) with
    params' = params - lr * m_hat / (sqrt(v_hat) + eps).

    Raises:
        ValueError: if the gradient contains a non-finite entry (the message
            names the first offending index).
    """
    grad = np.asarray(grad, dtype=float)
    params = np.asarray(params, dtype=float)
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} != params shape {params.shape}")
    bad = ~np.isfinite(grad)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise ValueError(f"non-finite gradient at parameter index {idx}")

    t = state.t + 1
    m = BETA1 * state.m + (1.0 - BETA1) * grad
    v = BETA2 * state.v + (1.0 - BETA2) * grad * grad
    m_hat = m / (1.0 - BETA1**t)
    v_hat = v / (1.0 - BETA2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + EPS)
    return AdamState(m=m, v=v, t=t), new_params
