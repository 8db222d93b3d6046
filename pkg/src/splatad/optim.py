"""Adam over flat parameter vectors.

One AdamState per parameter group gives per-group learning rates; the fit
loop keeps a state per splat parameter class and pose refinement a single
state for the 7 screw scalars. Updates are the standard bias-corrected rule
with defaults lr 1e-3, betas (0.9, 0.999), eps 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None  # optional max-norm gradient clip
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def reset(self) -> None:
        self.step = 0
        self.m = np.zeros(0)
        self.v = np.zeros(0)

    def copy(self) -> "AdamState":
        return AdamState(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            clip_norm=self.clip_norm, step=self.step, m=self.m.copy(), v=self.v.copy(),
        )


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeMismatch(f"params {params.shape} vs grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.count_nonzero(~np.isfinite(grads)))
        raise NonFiniteGradient(f"{bad}/{grads.size} non-finite gradient entries")

    if state.m.shape != params.shape:
        if state.step != 0:
            raise ShapeMismatch("parameter size changed mid-run; reset the state")
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)

    if state.clip_norm is not None:
        norm = float(np.linalg.norm(grads))
        if norm > state.clip_norm:
            grads = grads * (state.clip_norm / norm)

    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
