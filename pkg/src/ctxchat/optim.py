"""Adam optimizer and global-norm gradient clipping.

The paper never names its optimizer; Adam with the standard defaults
(lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8) is the configured choice.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor


class AdamState:
    """Per-parameter first/second moment accumulators plus the step count."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on the parameter data."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("adam_step: params, grads and state lengths differ")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data = p.data - (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm <= 0 or total <= max_norm:
        return grads
    factor = max_norm / total
    return [g * factor for g in grads]
