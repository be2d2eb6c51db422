"""Hot numeric kernels: 3D 'same' convolution and 2x2x2 max pooling.

Each kernel has two interchangeable implementations: a scalar loop nest
compiled with numba's @njit and a vectorized pure-numpy fallback. Set the
environment variable ``BATSEG_NO_NUMBA=1`` before import to force the numpy
path everywhere; it is also selected automatically when numba is missing.
``benchmarks/bench_kernels.py`` times the two side by side; per those
measurements the default dispatch is numba for the convolution forward pass
and pooling (2-60x faster) and the BLAS-backed tensordot form for the
convolution backward pass (the scalar loops lose to dgemm there).

All kernels take float64 arrays laid out (channels, d, h, w) and reduce in a
fixed (ci, kd, kh, kw) tap order, so results are deterministic. Max-pool ties
break to the lowest block-local linear index.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ShapeError

_NUMBA_DISABLED = os.environ.get("BATSEG_NO_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
)

if not _NUMBA_DISABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _NUMBA_DISABLED = True

USING_NUMBA = not _NUMBA_DISABLED


# ---------------------------------------------------------------------------
# loop bodies (plain python, compiled with numba when enabled)
# ---------------------------------------------------------------------------

def _conv3d_forward_loops(xp, w, b, out):
    cout = w.shape[0]
    cin = w.shape[1]
    k = w.shape[2]
    d, h, wd = out.shape[1], out.shape[2], out.shape[3]
    for co in range(cout):
        for od in range(d):
            for oh in range(h):
                for ow in range(wd):
                    acc = 0.0
                    for ci in range(cin):
                        for kd in range(k):
                            for kh in range(k):
                                for kw in range(k):
                                    acc += (
                                        w[co, ci, kd, kh, kw]
                                        * xp[ci, od + kd, oh + kh, ow + kw]
                                    )
                    out[co, od, oh, ow] = acc + b[co]


def _conv3d_grad_input_loops(w, gout, gxp):
    cout = w.shape[0]
    cin = w.shape[1]
    k = w.shape[2]
    d, h, wd = gout.shape[1], gout.shape[2], gout.shape[3]
    for ci in range(cin):
        for co in range(cout):
            for od in range(d):
                for oh in range(h):
                    for ow in range(wd):
                        g = gout[co, od, oh, ow]
                        for kd in range(k):
                            for kh in range(k):
                                for kw in range(k):
                                    gxp[ci, od + kd, oh + kh, ow + kw] += (
                                        w[co, ci, kd, kh, kw] * g
                                    )


def _conv3d_grad_weights_loops(xp, gout, gw, gb):
    cout = gw.shape[0]
    cin = gw.shape[1]
    k = gw.shape[2]
    d, h, wd = gout.shape[1], gout.shape[2], gout.shape[3]
    for co in range(cout):
        bias_acc = 0.0
        for od in range(d):
            for oh in range(h):
                for ow in range(wd):
                    bias_acc += gout[co, od, oh, ow]
        gb[co] = bias_acc
        for ci in range(cin):
            for kd in range(k):
                for kh in range(k):
                    for kw in range(k):
                        acc = 0.0
                        for od in range(d):
                            for oh in range(h):
                                for ow in range(wd):
                                    acc += (
                                        gout[co, od, oh, ow]
                                        * xp[ci, od + kd, oh + kh, ow + kw]
                                    )
                        gw[co, ci, kd, kh, kw] = acc


def _maxpool_forward_loops(x, out, idx):
    c, d2, h2, w2 = out.shape[0], out.shape[1], out.shape[2], out.shape[3]
    for ci in range(c):
        for od in range(d2):
            for oh in range(h2):
                for ow in range(w2):
                    best = x[ci, 2 * od, 2 * oh, 2 * ow]
                    besti = 0
                    li = 0
                    for kd in range(2):
                        for kh in range(2):
                            for kw in range(2):
                                val = x[ci, 2 * od + kd, 2 * oh + kh, 2 * ow + kw]
                                if val > best:
                                    best = val
                                    besti = li
                                li += 1
                    out[ci, od, oh, ow] = best
                    idx[ci, od, oh, ow] = besti


def _maxpool_grad_loops(gout, idx, gx):
    c, d2, h2, w2 = gout.shape[0], gout.shape[1], gout.shape[2], gout.shape[3]
    for ci in range(c):
        for od in range(d2):
            for oh in range(h2):
                for ow in range(w2):
                    li = idx[ci, od, oh, ow]
                    kd = li // 4
                    kh = (li // 2) % 2
                    kw = li % 2
                    gx[ci, 2 * od + kd, 2 * oh + kh, 2 * ow + kw] = gout[
                        ci, od, oh, ow
                    ]


if USING_NUMBA:
    _conv3d_forward_jit = njit(cache=True)(_conv3d_forward_loops)
    _conv3d_grad_input_jit = njit(cache=True)(_conv3d_grad_input_loops)
    _conv3d_grad_weights_jit = njit(cache=True)(_conv3d_grad_weights_loops)
    _maxpool_forward_jit = njit(cache=True)(_maxpool_forward_loops)
    _maxpool_grad_jit = njit(cache=True)(_maxpool_grad_loops)


# ---------------------------------------------------------------------------
# vectorized numpy fallbacks (same tap order, shifted-view accumulation)
# ---------------------------------------------------------------------------

def _conv3d_forward_np(xp, w, b, out):
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    d, h, wd = out.shape[1], out.shape[2], out.shape[3]
    for co in range(cout):
        acc = np.zeros((d, h, wd), dtype=np.float64)
        for ci in range(cin):
            for kd in range(k):
                for kh in range(k):
                    for kw in range(k):
                        acc += (
                            w[co, ci, kd, kh, kw]
                            * xp[ci, kd : kd + d, kh : kh + h, kw : kw + wd]
                        )
        out[co] = acc + b[co]


def _conv3d_grad_input_np(w, gout, gxp):
    k = w.shape[2]
    d, h, wd = gout.shape[1], gout.shape[2], gout.shape[3]
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                gxp[:, kd : kd + d, kh : kh + h, kw : kw + wd] += np.tensordot(
                    w[:, :, kd, kh, kw], gout, axes=([0], [0])
                )


def _conv3d_grad_weights_np(xp, gout, gw, gb):
    k = gw.shape[2]
    d, h, wd = gout.shape[1], gout.shape[2], gout.shape[3]
    gb[:] = gout.sum(axis=(1, 2, 3))
    for kd in range(k):
        for kh in range(k):
            for kw in range(k):
                gw[:, :, kd, kh, kw] = np.tensordot(
                    gout,
                    xp[:, kd : kd + d, kh : kh + h, kw : kw + wd],
                    axes=([1, 2, 3], [1, 2, 3]),
                )


def _blocked(x):
    c, d, h, w = x.shape
    return (
        x.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 5, 2, 4, 6)
        .reshape(c, d // 2, h // 2, w // 2, 8)
    )


def _maxpool_forward_np(x, out, idx):
    xb = _blocked(x)
    idx[:] = np.argmax(xb, axis=-1)
    out[:] = np.take_along_axis(xb, idx[..., None].astype(np.int64), axis=-1)[..., 0]


def _maxpool_grad_np(gout, idx, gx):
    c, d2, h2, w2 = gout.shape
    buf = np.zeros((c, d2, h2, w2, 8), dtype=np.float64)
    np.put_along_axis(buf, idx[..., None].astype(np.int64), gout[..., None], axis=-1)
    gx[:] = (
        buf.reshape(c, d2, h2, w2, 2, 2, 2)
        .transpose(0, 1, 4, 2, 5, 3, 6)
        .reshape(c, 2 * d2, 2 * h2, 2 * w2)
    )


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------

def _check_conv_args(x, w, b):
    if x.ndim != 4 or w.ndim != 5 or b.ndim != 1:
        raise ShapeError("conv3d expects x (c,d,h,w), w (co,ci,k,k,k), b (co,)")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[0]}, kernel expects {w.shape[1]}"
        )
    k = w.shape[2]
    if w.shape[2:] != (k, k, k) or k % 2 != 1:
        raise ShapeError(f"kernel must be cubic with odd size, got {w.shape[2:]}")
    if b.shape[0] != w.shape[0]:
        raise ShapeError("bias length must equal output channels")


def _pad_same(x, k):
    p = k // 2
    if p == 0:
        return x
    cin, d, h, w = x.shape
    xp = np.zeros((cin, d + 2 * p, h + 2 * p, w + 2 * p), dtype=np.float64)
    xp[:, p : p + d, p : p + h, p : p + w] = x
    return xp


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, *, force_numpy: bool = False) -> np.ndarray:
    """'same'-padded 3D cross-correlation: out[co] = sum_taps w*x + b[co]."""
    _check_conv_args(x, w, b)
    xp = _pad_same(np.ascontiguousarray(x, dtype=np.float64), w.shape[2])
    out = np.empty((w.shape[0], *x.shape[1:]), dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if USING_NUMBA and not force_numpy:
        _conv3d_forward_jit(xp, w, b, out)
    else:
        _conv3d_forward_np(xp, w, b, out)
    return out


def conv3d_backward(
    x: np.ndarray, w: np.ndarray, gout: np.ndarray, *, force_numpy: bool = False, force_scalar: bool = False
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv3d_forward: returns (d/dx, d/dw, d/db) given d/dout.

    Both paths default to the shifted-view tensordot form: its contractions
    ride BLAS and beat the jitted scalar loops on every measured shape (see
    benchmarks/bench_kernels.py). ``force_scalar`` selects the jitted loops,
    kept for that comparison.
    """
    _check_conv_args(x, w, b=np.zeros(w.shape[0]))
    if gout.shape != (w.shape[0], *x.shape[1:]):
        raise ShapeError(
            f"gout shape {gout.shape} does not match output {(w.shape[0], *x.shape[1:])}"
        )
    k = w.shape[2]
    p = k // 2
    xp = _pad_same(np.ascontiguousarray(x, dtype=np.float64), k)
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    gb = np.empty(w.shape[0], dtype=np.float64)
    if force_scalar and USING_NUMBA and not force_numpy:
        _conv3d_grad_input_jit(w, gout, gxp)
        _conv3d_grad_weights_jit(xp, gout, gw, gb)
    else:
        _conv3d_grad_input_np(w, gout, gxp)
        _conv3d_grad_weights_np(xp, gout, gw, gb)
    cin, d, h, wd = x.shape
    gx = gxp[:, p : p + d, p : p + h, p : p + wd]
    return np.ascontiguousarray(gx), gw, gb


def maxpool3d_forward(x: np.ndarray, *, force_numpy: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """2x2x2 max pooling; also returns block-local argmax (0..7) for backward."""
    if x.ndim != 4:
        raise ShapeError("maxpool expects a (c,d,h,w) array")
    if any(s % 2 for s in x.shape[1:]):
        raise ShapeError(f"spatial dims must be even, got {x.shape[1:]}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    c, d, h, w = x.shape
    out = np.empty((c, d // 2, h // 2, w // 2), dtype=np.float64)
    idx = np.empty((c, d // 2, h // 2, w // 2), dtype=np.uint8)
    if USING_NUMBA and not force_numpy:
        _maxpool_forward_jit(x, out, idx)
    else:
        _maxpool_forward_np(x, out, idx)
    return out, idx


def maxpool3d_backward(
    gout: np.ndarray, idx: np.ndarray, *, force_numpy: bool = False
) -> np.ndarray:
    """Route pooled gradients back to the argmax voxel of each 2x2x2 block."""
    if gout.shape != idx.shape:
        raise ShapeError("gout and idx shapes must match")
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    c, d2, h2, w2 = gout.shape
    gx = np.zeros((c, 2 * d2, 2 * h2, 2 * w2), dtype=np.float64)
    if USING_NUMBA and not force_numpy:
        _maxpool_grad_jit(gout, idx, gx)
    else:
        _maxpool_grad_np(gout, idx, gx)
    return gx


def upsample3d_nearest(x: np.ndarray) -> np.ndarray:
    """Replicate every voxel into a 2x2x2 block (memory-bound; numpy on both paths)."""
    if x.ndim != 4:
        raise ShapeError("upsample expects a (c,d,h,w) array")
    return np.repeat(np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), 2, axis=3)


def upsample3d_nearest_backward(gout: np.ndarray) -> np.ndarray:
    """Adjoint of replication: sum each 2x2x2 output block into its source voxel."""
    c, d, h, w = gout.shape
    return gout.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2).sum(axis=(2, 4, 6))
