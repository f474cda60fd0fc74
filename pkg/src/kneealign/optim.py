"""Adam optimizer with bias-corrected moment estimates."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import ShapeMismatch


class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    Deterministic given identical inputs; parameters with a zero gradient
    and fresh moments are left unchanged.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads, and state must have equal lengths")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)


class Adam:
    """Convenience wrapper tying parameters to an AdamState."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4, **kwargs):
        self.params = params
        self.state = AdamState(params, lr=lr, **kwargs)

    def step(self) -> None:
        grads = []
        for p in self.params:
            grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
