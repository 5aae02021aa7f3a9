"""Adam with bias correction, plus a small stateful wrapper used by the
training loops."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeMismatch


@dataclass
class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState) -> None:
    """One Adam update, in place on each param's data.

    m_hat = m / (1 - beta1^t); v_hat = v / (1 - beta2^t);
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps).
    """
    if len(params) != len(state.m):
        raise ShapeMismatch(f"adam_step: {len(params)} params vs state for "
                            f"{len(state.m)}")
    state.t += 1
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    bc1 = np.float32(1.0 - state.beta1 ** state.t)
    bc2 = np.float32(1.0 - state.beta2 ** state.t)
    lr, eps = np.float32(state.lr), np.float32(state.eps)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float32)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"adam_step: grad {g.shape} vs param {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Convenience wrapper: reads .grad from the tensors it was given."""

    def __init__(self, params: list[Tensor], lr=1e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr=lr, beta1=beta1,
                                          beta2=beta2, eps=eps)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
