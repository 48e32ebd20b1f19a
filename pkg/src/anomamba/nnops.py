"""Convolution, normalization and resampling primitives.

All ops accept a single sample (channels-first, no batch dim) or a batched
input with one extra leading dim; gradients are hand-written. Convolutions
run as im2col + BLAS matmul; the col2im scatter loops over the k*k kernel
offsets so it stays vectorized.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, from_op

# (H, W, H2, W2, dtype) -> gather indices and lerp weights
_RESIZE_CACHE: dict = {}


def _im2col(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Strided view (B, C, k, k, out_h, out_w) over a padded input."""
    b, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c, k, k, out_h, out_w),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )


def _col2im(cols6: np.ndarray, k: int, stride: int, hp: int, wp: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto the padded grid."""
    b, c, _, _, out_h, out_w = cols6.shape
    acc = np.zeros((b, c, hp, wp), dtype=cols6.dtype)
    for ki in range(k):
        for kj in range(k):
            acc[:, :, ki : ki + stride * out_h : stride, kj : kj + stride * out_w : stride] += cols6[
                :, :, ki, kj
            ]
    return acc


def _batched(x: Tensor):
    if x.ndim == 3:
        return x.reshape(1, *x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected 3-D or 4-D input, got shape {x.shape}")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution. ``w`` is (c_out, c_in, k, k)."""
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: kernel must be (c_out, c_in, k, k), got {w.shape}")
    xb, squeeze = _batched(x)
    b, c_in, h, wd = xb.shape
    c_out, c_in_k, k, _ = w.shape
    if c_in != c_in_k:
        raise ShapeError(f"conv2d: input channels {c_in} != kernel c_in {c_in_k}")
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (wd + 2 * padding - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d: kernel {k} too large for input {h}x{wd} at padding {padding}")

    xp = np.pad(xb.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xb.data
    cols = np.ascontiguousarray(_im2col(xp, k, stride, out_h, out_w)).reshape(b, c_in * k * k, -1)
    w2 = w.data.reshape(c_out, -1)
    y = np.matmul(w2[None], cols).reshape(b, c_out, out_h, out_w)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    parents = (xb, w) if bias is None else (xb, w, bias)

    def back(g):
        g2 = g.reshape(b, c_out, -1)
        # One BLAS gemm instead of einsum: (c_out, B*L) @ (B*L, c_in*k*k).
        dw = (
            g2.transpose(1, 0, 2).reshape(c_out, -1)
            @ cols.transpose(1, 0, 2).reshape(c_in * k * k, -1).T
        ).reshape(w.shape)
        dcols = np.matmul(w2.T[None], g2).reshape(b, c_in, k, k, out_h, out_w)
        dxp = _col2im(dcols, k, stride, xp.shape[2], xp.shape[3])
        dx = dxp[:, :, padding : padding + h, padding : padding + wd] if padding else dxp
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    out = from_op(y, parents, back)
    return out.reshape(*y.shape[1:]) if squeeze else out


def conv_transpose2d(
    x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Transposed 2-D convolution (adjoint of conv2d at the same stride/padding).

    ``w`` is (c_in, c_out, k, k); output is (h-1)*stride + k - 2*padding.
    """
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv_transpose2d: kernel must be (c_in, c_out, k, k), got {w.shape}")
    xb, squeeze = _batched(x)
    b, c_in, h, wd = xb.shape
    c_in_k, c_out, k, _ = w.shape
    if c_in != c_in_k:
        raise ShapeError(f"conv_transpose2d: input channels {c_in} != kernel c_in {c_in_k}")
    full_h = (h - 1) * stride + k
    full_w = (wd - 1) * stride + k
    out_h = full_h - 2 * padding
    out_w = full_w - 2 * padding
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv_transpose2d: padding {padding} erases the {full_h}x{full_w} output")

    w2 = w.data.reshape(c_in, -1)  # (c_in, c_out*k*k)
    x2 = xb.data.reshape(b, c_in, -1)
    cols = np.matmul(w2.T[None], x2).reshape(b, c_out, k, k, h, wd)
    yp = _col2im(cols, k, stride, full_h, full_w)
    y = yp[:, :, padding : padding + out_h, padding : padding + out_w] if padding else yp
    y = np.ascontiguousarray(y)
    if bias is not None:
        y = y + bias.data[None, :, None, None]
    parents = (xb, w) if bias is None else (xb, w, bias)

    def back(g):
        gp = (
            np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
            if padding
            else g
        )
        gcols = np.ascontiguousarray(_im2col(gp, k, stride, h, wd)).reshape(b, c_out * k * k, -1)
        # dx: convolve the upstream gradient with the kernel read as (out=c_in, in=c_out).
        dx = np.matmul(w2[None], gcols).reshape(b, c_in, h, wd)
        dw = (
            x2.transpose(1, 0, 2).reshape(c_in, -1)
            @ gcols.transpose(1, 0, 2).reshape(c_out * k * k, -1).T
        ).reshape(w.shape)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    out = from_op(y, parents, back)
    return out.reshape(*y.shape[1:]) if squeeze else out


def conv1d_causal_depthwise(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel causal 1-D convolution over (T, D) or (B, T, D) sequences.

    ``kernel`` is (D, w) with tap j applied at lag j, so output index t only
    sees inputs at t-j for j in [0, w).
    """
    if x.ndim == 2:
        xb, squeeze = x.reshape(1, *x.shape), True
    elif x.ndim == 3:
        xb, squeeze = x, False
    else:
        raise ShapeError(f"conv1d_causal_depthwise: expected (T,D) or (B,T,D), got {x.shape}")
    b, t, d = xb.shape
    if kernel.ndim != 2 or kernel.shape[0] != d:
        raise ShapeError(f"conv1d_causal_depthwise: kernel {kernel.shape} vs channel count {d}")
    width = kernel.shape[1]

    y = np.zeros_like(xb.data)
    for j in range(width):
        if j == 0:
            y += kernel.data[:, 0] * xb.data
        else:
            y[:, j:, :] += kernel.data[:, j] * xb.data[:, :-j, :]
    if bias is not None:
        y = y + bias.data
    parents = (xb, kernel) if bias is None else (xb, kernel, bias)

    def back(g):
        dk = np.empty_like(kernel.data)
        dx = np.zeros_like(xb.data)
        for j in range(width):
            if j == 0:
                dk[:, 0] = (g * xb.data).sum(axis=(0, 1))
                dx += kernel.data[:, 0] * g
            else:
                dk[:, j] = (g[:, j:, :] * xb.data[:, :-j, :]).sum(axis=(0, 1))
                dx[:, :-j, :] += kernel.data[:, j] * g[:, j:, :]
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(0, 1))

    out = from_op(y, parents, back)
    return out.reshape(*y.shape[1:]) if squeeze else out


def _norm_axes(x: Tensor, kind: str) -> tuple:
    if kind == "layer":
        return (x.ndim - 1,)
    if kind == "instance":
        if x.ndim < 3:
            raise ShapeError(f"instance norm needs (C,H,W) or (B,C,H,W), got {x.shape}")
        return (x.ndim - 2, x.ndim - 1)
    raise ValueError(f"unknown normalization kind {kind!r}")


def normalize(
    x: Tensor,
    kind: str = "layer",
    gain: Tensor | None = None,
    bias: Tensor | None = None,
    eps: float = 1e-5,
) -> Tensor:
    """Zero-mean unit-variance over the last dim (layer) or spatial dims (instance)."""
    axes = _norm_axes(x, kind)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar

    if (gain is None) != (bias is None):
        raise ShapeError("normalize: gain and bias must be supplied together")
    affine = gain is not None
    if affine:
        feat = x.shape[-1] if kind == "layer" else x.shape[-3]
        if gain.shape != (feat,) or bias.shape != (feat,):
            raise ShapeError(
                f"normalize affine shapes {gain.shape}/{bias.shape} vs feature dim {feat}"
            )
        gb = gain.data if kind == "layer" else gain.data[:, None, None]
        bb = bias.data if kind == "layer" else bias.data[:, None, None]
        y = xhat * gb + bb
        parents = (x, gain, bias)
    else:
        gb = None
        y = xhat
        parents = (x,)

    # Axes that reduce onto the affine parameter shape.
    affine_axis = x.ndim - 1 if kind == "layer" else x.ndim - 3
    red = tuple(a for a in range(x.ndim) if a != affine_axis)

    def back(g):
        dxhat = g * gb if affine else g
        m1 = dxhat.mean(axis=axes, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=axes, keepdims=True)
        dx = ivar * (dxhat - m1 - xhat * m2)
        if not affine:
            return (dx,)
        return dx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return from_op(y, parents, back)


def _resize_plan(h: int, w: int, h2: int, w2: int, dtype):
    key = (h, w, h2, w2, np.dtype(dtype).name)
    plan = _RESIZE_CACHE.get(key)
    if plan is not None:
        return plan
    # Half-pixel-center sampling (align_corners=False), clamped to the border.
    ys = (np.arange(h2, dtype=np.float64) + 0.5) * (h / h2) - 0.5
    xs = (np.arange(w2, dtype=np.float64) + 0.5) * (w / w2) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(dtype)[:, None]
    wx = (xs - x0).astype(dtype)[None, :]
    idx00 = (y0[:, None] * w + x0[None, :]).ravel()
    idx01 = (y0[:, None] * w + x1[None, :]).ravel()
    idx10 = (y1[:, None] * w + x0[None, :]).ravel()
    idx11 = (y1[:, None] * w + x1[None, :]).ravel()
    plan = (idx00, idx01, idx10, idx11, wy, wx)
    _RESIZE_CACHE[key] = plan
    return plan


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable bilinear resampling with half-pixel centers.

    Computed as nested lerps so constant inputs (and the identity case) come
    out bit-exact.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"bilinear_resize: target {out_h}x{out_w}")
    xb, squeeze = _batched(x)
    b, c, h, w = xb.shape
    idx00, idx01, idx10, idx11, wy, wx = _resize_plan(h, w, out_h, out_w, xb.dtype)
    flat = xb.data.reshape(b, c, h * w)
    v00 = flat[:, :, idx00].reshape(b, c, out_h, out_w)
    v01 = flat[:, :, idx01].reshape(b, c, out_h, out_w)
    v10 = flat[:, :, idx10].reshape(b, c, out_h, out_w)
    v11 = flat[:, :, idx11].reshape(b, c, out_h, out_w)
    top = v00 + (v01 - v00) * wx
    bot = v10 + (v11 - v10) * wx
    y = top + (bot - top) * wy

    def back(g):
        dtop = g * (1.0 - wy)
        dbot = g * wy
        acc = np.zeros((b * c, h * w), dtype=g.dtype)
        corners = (
            (idx00, (dtop * (1.0 - wx))),
            (idx01, (dtop * wx)),
            (idx10, (dbot * (1.0 - wx))),
            (idx11, (dbot * wx)),
        )
        for idx, part in corners:
            np.add.at(acc, (slice(None), idx), part.reshape(b * c, -1))
        return (acc.reshape(xb.shape),)

    out = from_op(y, (xb,), back)
    return out.reshape(*y.shape[1:]) if squeeze else out
