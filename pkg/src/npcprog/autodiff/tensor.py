"""Tensor core: graph recording, backward pass, and the non-conv operators.

Conventions
-----------
* All values are float32. 5-D feature maps are laid out N x C x D x H x W.
* Ops record a backward closure returning one gradient array per parent
  (None for parents that do not require grad).
* backward(loss) accumulates into leaf .grad; calling it twice on the same
  graph without zeroing doubles each leaf gradient exactly.
* Graph recording can be suspended with the no_grad() context manager, e.g.
  for validation forward passes.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalar(ValueError):
    pass


_GRAD_ENABLED = True
_DEBUG_CHECKS = False


@contextlib.contextmanager
def no_grad():
    """Suspend graph recording within the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every op asserts its output is finite (NaN/Inf hunt)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are allowed on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32))


def _record(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, attaching the graph edge when grads are live."""
    if _DEBUG_CHECKS and not np.isfinite(data).all():
        raise FloatingPointError("non-finite values in op output")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order  # parents appear before their consumers


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss; accumulates into leaf .grad."""
    if loss.data.size != 1:
        raise NotScalar(f"backward() needs a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = flow.pop(id(node), None)
        if grad is None:
            continue
        if node._backward is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        parent_grads = node._backward(grad)
        for parent, pgrad in zip(node._parents, parent_grads):
            if pgrad is None or not parent.requires_grad:
                continue
            key = id(parent)
            held = flow.get(key)
            flow[key] = pgrad if held is None else held + pgrad


# ---------------------------------------------------------------------------
# pointwise and structural ops


def add(a, b) -> Tensor:
    """Elementwise sum; operands must share a shape or one may be scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def _bwd(g):
        ga = g if a.shape == g.shape else np.asarray(np.sum(g, dtype=np.float32)).reshape(a.shape)
        gb = g if b.shape == g.shape else np.asarray(np.sum(g, dtype=np.float32)).reshape(b.shape)
        return ga, gb

    return _record(out, (a, b), _bwd)


def add_residual(x, skip) -> Tensor:
    """Residual addition: strict same-shape elementwise sum."""
    x, skip = _as_tensor(x), _as_tensor(skip)
    if x.shape != skip.shape:
        raise ShapeMismatch(f"add_residual: {x.shape} vs {skip.shape}")
    return add(x, skip)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    out = a.data * b.data

    def _bwd(g):
        ga = g * b.data
        gb = g * a.data
        if a.shape != ga.shape:
            ga = np.asarray(np.sum(ga, dtype=np.float32)).reshape(a.shape)
        if b.shape != gb.shape:
            gb = np.asarray(np.sum(gb, dtype=np.float32)).reshape(b.shape)
        return ga, gb

    return _record(out, (a, b), _bwd)


def tensor_sum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.sum(x.data, dtype=np.float32)

    def _bwd(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _record(np.asarray(out), (x,), _bwd)


def tensor_mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(np.mean(x.data, dtype=np.float32))
    inv = np.float32(1.0 / x.size)

    def _bwd(g):
        return (np.broadcast_to(g * inv, x.shape).copy(),)

    return _record(out, (x,), _bwd)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # tanh form is stable for large |x|
    y = (0.5 * (1.0 + np.tanh(0.5 * x.data))).astype(np.float32, copy=False)

    def _bwd(g):
        return (g * y * (1.0 - y),)

    return _record(y, (x,), _bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted, dtype=np.float32)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def _bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(y, (x,), _bwd)


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """Per-channel PReLU on (N, C, ...) tensors; x == 0 takes the positive branch."""
    x, slope = _as_tensor(x), _as_tensor(slope)
    if x.ndim < 2 or slope.shape != (x.shape[1],):
        raise ShapeMismatch(f"prelu: slope {slope.shape} for input {x.shape}")
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    a = slope.data.reshape(bshape)
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def _bwd(g):
        gx = np.where(neg, a * g, g)
        ga = np.sum(g * x.data * neg, axis=reduce_axes, dtype=np.float32)
        return gx.astype(np.float32), ga.astype(np.float32)

    return _record(out.astype(np.float32), (x, slope), _bwd)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor,
                  eps: float = 1e-5) -> Tensor:
    """Standardize each (n, c) slice over its spatial extent, then scale/shift.

    Works for any layout (N, C, spatial...); requires spatial size >= 2.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.ndim < 3:
        raise ShapeMismatch(f"instance_norm: need (N, C, spatial...), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"instance_norm: gamma/beta must be ({c},)")
    spatial_axes = tuple(range(2, x.ndim))
    m = int(np.prod([x.shape[ax] for ax in spatial_axes]))
    if m < 2:
        raise ShapeMismatch("instance_norm: spatial size must be >= 2")
    mu = np.mean(x.data, axis=spatial_axes, keepdims=True, dtype=np.float32)
    var = np.var(x.data, axis=spatial_axes, keepdims=True, dtype=np.float32)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = (x.data - mu) * inv
    bshape = (1, c) + (1,) * (x.ndim - 2)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def _bwd(g):
        gbeta = np.sum(g, axis=(0,) + spatial_axes, dtype=np.float32)
        ggamma = np.sum(g * xhat, axis=(0,) + spatial_axes, dtype=np.float32)
        dxhat = g * gamma.data.reshape(bshape)
        sum_dxhat = np.sum(dxhat, axis=spatial_axes, keepdims=True, dtype=np.float32)
        sum_dxhat_xhat = np.sum(dxhat * xhat, axis=spatial_axes, keepdims=True,
                                dtype=np.float32)
        gx = (inv / m) * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return gx.astype(np.float32), ggamma, gbeta

    return _record(out.astype(np.float32), (x, gamma, beta), _bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: (N, F) @ (O, F)^T + (O,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear: x {x.shape} vs w {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatch(f"linear: bias {b.shape} for {w.shape[0]} outputs")
    out = x.data @ w.data.T + b.data

    def _bwd(g):
        return g @ w.data, g.T @ x.data, np.sum(g, axis=0, dtype=np.float32)

    return _record(out, (x, w, b), _bwd)


def concat_channels(xs) -> Tensor:
    """Concatenate along axis 1; all other dims must agree."""
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeMismatch("concat_channels: empty input list")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or x.shape[0] != ref[0] or x.shape[2:] != ref[2:]:
            raise ShapeMismatch(f"concat_channels: {x.shape} vs {ref}")
    out = np.concatenate([x.data for x in xs], axis=1)
    splits = np.cumsum([x.shape[1] for x in xs])[:-1]

    def _bwd(g):
        return tuple(np.ascontiguousarray(part)
                     for part in np.split(g, splits, axis=1))

    return _record(out, tuple(xs), _bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial dims of (N, C, spatial...) -> (N, C)."""
    x = _as_tensor(x)
    if x.ndim < 3:
        raise ShapeMismatch(f"global_avg_pool: need spatial dims, got {x.shape}")
    spatial_axes = tuple(range(2, x.ndim))
    m = int(np.prod([x.shape[ax] for ax in spatial_axes]))
    out = np.mean(x.data, axis=spatial_axes, dtype=np.float32)
    bshape = x.shape[:2] + (1,) * (x.ndim - 2)

    def _bwd(g):
        g = (g / np.float32(m)).reshape(bshape)
        return (np.broadcast_to(g, x.shape).astype(np.float32),)

    return _record(out, (x,), _bwd)
