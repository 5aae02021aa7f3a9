"""3-D convolution and its transpose.

Convention is cross-correlation (no kernel flip) with zero padding, the
dominant deep-learning convention; the brute-force oracles in the test suite
use the same convention.

Forward, input-gradient and weight-gradient all reduce to one im2col +
sgemm kernel, so everything heavy runs inside BLAS. The input gradient (and
the transpose's forward, which is the same linear map) is computed as a
stride-1 correlation of the zero-stuffed upstream gradient with the
channel-swapped, spatially flipped kernel.

Weight layouts:
    conv3d:            w (Cout, Cin, kd, kh, kw), maps Cin -> Cout channels
    conv3d_transpose:  w (Cin,  Cout, kd, kh, kw), maps Cin -> Cout channels

so conv3d_transpose(y, w) with conv3d's own w is the adjoint of
conv3d(x, w): <conv3d(x, w, 0), y> == <x, conv3d_transpose(y, w, 0)>.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, ShapeMismatch, _as_tensor, _record

_ONES = (1, 1, 1)


def _triple(v, name):
    t = tuple(int(x) for x in v)
    if len(t) != 3 or any(x < 1 for x in t):
        raise ShapeMismatch(f"{name} must be 3 positive ints, got {v}")
    return t


def _pad_triple(v):
    t = tuple(int(x) for x in v)
    if len(t) != 3 or any(x < 0 for x in t):
        raise ShapeMismatch(f"pad must be 3 non-negative ints, got {v}")
    return t


def _pad5(x: np.ndarray, pad) -> np.ndarray:
    pd, ph, pw = pad
    if pd == ph == pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))


def _patches(xp: np.ndarray, kshape, stride):
    """Strided (N, Do, Ho, Wo, C, kd, kh, kw) window view over padded input."""
    kd, kh, kw = kshape
    sd, sh, sw = stride
    n, c, dp, hp, wp = xp.shape
    do = (dp - kd) // sd + 1
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    sn, sc, sd_, sh_, sw_ = xp.strides
    view = as_strided(
        xp,
        shape=(n, do, ho, wo, c, kd, kh, kw),
        strides=(sn, sd_ * sd, sh_ * sh, sw_ * sw, sc, sd_, sh_, sw_),
        writeable=False,
    )
    return view, (do, ho, wo)


def _corr_core(xp: np.ndarray, w: np.ndarray, stride) -> np.ndarray:
    """Cross-correlate pre-padded (N,C,D,H,W) with (Co,C,k...) -> (N,Co,...)."""
    view, (do, ho, wo) = _patches(xp, w.shape[2:], stride)
    n = xp.shape[0]
    cols = view.reshape(n * do * ho * wo, -1)  # copies the strided view
    out = cols @ w.reshape(w.shape[0], -1).T
    out = out.reshape(n, do, ho, wo, w.shape[0]).transpose(0, 4, 1, 2, 3)
    return np.ascontiguousarray(out)


def _weight_grad(xp: np.ndarray, g: np.ndarray, stride, kshape) -> np.ndarray:
    """d(loss)/d(w) for a correlation with pre-padded input xp and output grad g."""
    view, (do, ho, wo) = _patches(xp, kshape, stride)
    n, co = g.shape[0], g.shape[1]
    cols = view.reshape(n * do * ho * wo, -1)
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 4, 1)).reshape(-1, co)
    gw = gmat.T @ cols
    return gw.reshape(co, xp.shape[1], *kshape)


def _input_grad(g: np.ndarray, w: np.ndarray, stride, pad,
                in_spatial) -> np.ndarray:
    """d(loss)/d(x) for conv3d, i.e. the adjoint map applied to g.

    g: (N, Co, Do, Ho, Wo); w: (Co, Ci, k...); returns (N, Ci, *in_spatial).
    """
    n, co = g.shape[0], g.shape[1]
    kd, kh, kw = w.shape[2:]
    sd, sh, sw = stride
    pd, ph, pw = pad
    do, ho, wo = g.shape[2:]
    ld, lh, lw = (do - 1) * sd + 1, (ho - 1) * sh + 1, (wo - 1) * sw + 1
    canvas = np.zeros((n, co, ld + 2 * (kd - 1), lh + 2 * (kh - 1),
                       lw + 2 * (kw - 1)), dtype=np.float32)
    canvas[:, :, kd - 1:kd - 1 + ld:sd, kh - 1:kh - 1 + lh:sh,
           kw - 1:kw - 1 + lw:sw] = g
    wf = np.ascontiguousarray(
        w[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
    full = _corr_core(canvas, wf, _ONES)  # (N, Ci, ld+kd-1, ...)
    di, hi, wi = in_spatial
    gxp = np.zeros((n, w.shape[1], di + 2 * pd, hi + 2 * ph, wi + 2 * pw),
                   dtype=np.float32)
    gxp[:, :, :full.shape[2], :full.shape[3], :full.shape[4]] = full
    return np.ascontiguousarray(gxp[:, :, pd:pd + di, ph:ph + hi, pw:pw + wi])


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride=_ONES, pad=(0, 0, 0)) -> Tensor:
    """Strided zero-padded cross-correlation.

    x: (N, Cin, D, H, W); w: (Cout, Cin, kd, kh, kw); b: (Cout,).
    Output spatial dims: floor((D + 2*pd - kd) / sd) + 1, all >= 1.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    stride = _triple(stride, "stride")
    pad = _pad_triple(pad)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeMismatch(f"conv3d: x {x.shape}, w {w.shape} must be 5-D")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv3d: Cin {x.shape[1]} != w Cin {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeMismatch(f"conv3d: bias {b.shape} for {w.shape[0]} channels")
    for ax in range(3):
        span = x.shape[2 + ax] + 2 * pad[ax] - w.shape[2 + ax]
        if span < 0 or span // stride[ax] + 1 < 1:
            raise ShapeMismatch(
                f"conv3d: kernel {w.shape[2:]} does not fit input {x.shape[2:]} "
                f"with stride {stride} pad {pad}")

    xp = _pad5(x.data, pad)
    out = _corr_core(xp, w.data, stride)
    out += b.data.reshape(1, -1, 1, 1, 1)
    in_spatial = x.shape[2:]
    kshape = w.shape[2:]

    def _bwd(g):
        gx = _input_grad(g, w.data, stride, pad, in_spatial) \
            if x.requires_grad else None
        gw = _weight_grad(xp, g, stride, kshape) if w.requires_grad else None
        gb = np.sum(g, axis=(0, 2, 3, 4), dtype=np.float32) \
            if b.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, w, b), _bwd)


def conv3d_transpose(x: Tensor, w: Tensor, b: Tensor, stride=_ONES,
                     pad=(0, 0, 0)) -> Tensor:
    """Transposed convolution: the linear adjoint of conv3d.

    x: (N, Cin, D, H, W); w: (Cin, Cout, kd, kh, kw); b: (Cout,).
    Output spatial dims: (D - 1) * sd - 2*pd + kd.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    stride = _triple(stride, "stride")
    pad = _pad_triple(pad)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeMismatch(f"conv3d_transpose: x {x.shape}, w {w.shape} must be 5-D")
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatch(
            f"conv3d_transpose: Cin {x.shape[1]} != w Cin {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ShapeMismatch(
            f"conv3d_transpose: bias {b.shape} for {w.shape[1]} channels")
    out_spatial = []
    for ax in range(3):
        o = (x.shape[2 + ax] - 1) * stride[ax] - 2 * pad[ax] + w.shape[2 + ax]
        if o < 1:
            raise ShapeMismatch(
                f"conv3d_transpose: non-positive output dim on axis {ax}")
        out_spatial.append(o)
    out_spatial = tuple(out_spatial)

    # The transpose's forward is conv3d's input gradient with w read in
    # conv layout (Co=Cin_here, Ci=Cout_here).
    out = _input_grad(x.data, w.data, stride, pad, out_spatial)
    out += b.data.reshape(1, -1, 1, 1, 1)
    kshape = w.shape[2:]

    def _bwd(g):
        gp = _pad5(g, pad)
        gx = _corr_core(gp, w.data, stride) if x.requires_grad else None
        gw = _weight_grad(gp, x.data, stride, kshape) if w.requires_grad else None
        gb = np.sum(g, axis=(0, 2, 3, 4), dtype=np.float32) \
            if b.requires_grad else None
        return gx, gw, gb

    return _record(out, (x, w, b), _bwd)
