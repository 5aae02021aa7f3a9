"""Training losses: soft Dice, weighted binary cross-entropy on logits, and
softmax cross-entropy. All are fused ops with hand-written backward passes
and numerically stable formulations.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeMismatch, _as_tensor, _record

DICE_EPS = 1e-5


def soft_dice_loss(p: Tensor, g: Tensor, eps: float = DICE_EPS) -> Tensor:
    """1 - (2*sum(p*g) + eps) / (sum(p^2) + sum(g^2) + eps).

    p holds foreground probabilities in [0, 1], g the binary ground truth of
    the same shape. The epsilon keeps empty masks away from 0/0 while
    distorting the value by less than 1e-4. Differentiable w.r.t. p.
    """
    p, g = _as_tensor(p), _as_tensor(g)
    if p.shape != g.shape:
        raise ShapeMismatch(f"soft_dice_loss: {p.shape} vs {g.shape}")
    pd = p.data.astype(np.float64)
    gd = g.data.astype(np.float64)
    inter = float((pd * gd).sum())
    denom = float((pd * pd).sum() + (gd * gd).sum()) + eps
    num = 2.0 * inter + eps
    loss = np.asarray(1.0 - num / denom, dtype=np.float32)

    def _bwd(grad):
        # d/dp [num/denom] = (2g*denom - num*2p) / denom^2
        gp = -(2.0 * gd * denom - num * 2.0 * pd) / (denom * denom)
        return (grad * gp).astype(np.float32), None

    return _record(loss, (p, g), _bwd)


def weighted_bce(logits: Tensor, targets, w_pos: float = 1.0,
                 w_neg: float = 1.0) -> Tensor:
    """Mean class-weighted binary cross-entropy on raw logits.

    Per sample: -[w_pos*y*log(sigmoid(z)) + w_neg*(1-y)*log(1-sigmoid(z))],
    evaluated as w * softplus(-z or z) so it stays finite for any logit.
    """
    if w_pos <= 0 or w_neg <= 0:
        raise ValueError(f"class weights must be > 0, got {w_pos}, {w_neg}")
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.float32).reshape(logits.shape)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("weighted_bce targets must be 0/1")
    z = logits.data.astype(np.float64)
    # softplus(t) = log1p(exp(-|t|)) + max(t, 0)
    sp_neg = np.log1p(np.exp(-np.abs(z))) + np.maximum(-z, 0.0)  # softplus(-z)
    sp_pos = np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)   # softplus(z)
    per = np.where(y == 1.0, w_pos * sp_neg, w_neg * sp_pos)
    n = per.size
    loss = np.asarray(per.mean(), dtype=np.float32)
    sig = 1.0 / (1.0 + np.exp(-z))
    w = np.where(y == 1.0, w_pos, w_neg)

    def _bwd(grad):
        gz = w * (sig - y) / n
        return (grad * gz.astype(np.float32),)

    return _record(loss, (logits,), _bwd)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], stable log-sum-exp form.

    logits: (N, K); labels: int array of length N with values in [0, K).
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeMismatch(f"softmax_cross_entropy: need (N, K), got {logits.shape}")
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"softmax_cross_entropy: {n} rows vs {labels.shape} labels")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("labels out of range")
    z = logits.data.astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = np.asarray((lse - z[np.arange(n), labels]).mean(), dtype=np.float32)
    probs = np.exp(z - lse[:, None])

    def _bwd(grad):
        gz = probs.copy()
        gz[np.arange(n), labels] -= 1.0
        gz /= n
        return (grad * gz.astype(np.float32),)

    return _record(loss, (logits,), _bwd)
