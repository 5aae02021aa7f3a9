"""Central finite-difference gradient checking.

The op under test is wrapped in a closure returning any-shaped output; the
checker contracts it to a scalar with a fixed random projection so every
output element influences the loss, then compares analytic gradients against
central differences. Differences are accumulated in float64; the forward
passes themselves stay float32, which is what the tolerances are set for.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def grad_check(fn, wrt, eps: float = 1e-3, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn: nullary closure running the op on the current data of `wrt` tensors.
    wrt: tensors (requires_grad=True) whose gradients are checked.
    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    out = fn()
    rng = np.random.default_rng(seed)
    sign = rng.choice((-1.0, 1.0), size=out.shape)
    proj64 = (sign * rng.uniform(0.5, 1.5, size=out.shape)).astype(np.float64)
    proj = Tensor(proj64.astype(np.float32))

    def scalar_loss():
        return (fn() * proj).sum()

    for t in wrt:
        t.grad = None
    loss = scalar_loss()
    backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in wrt]

    def project(tensor_out) -> float:
        return float(tensor_out.data.astype(np.float64).ravel()
                     @ proj64.ravel())

    worst = 0.0
    for t, a in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = project(fn())
            flat[i] = orig - eps
            f_minus = project(fn())
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(float(aflat[i])), abs(numeric), 1e-8)
            worst = max(worst, abs(float(aflat[i]) - numeric) / denom)
    return worst
