"""NumPy fallback for the grouped convolution kernels.

Same contracts as the compiled extension: cross-correlation (no kernel
flip), zero padding, floor output sizing OH = (H + 2p - kh)//stride + 1.
Dense convolutions go through im2col + GEMM; the depthwise case uses a
strided window view with einsum to avoid a per-channel Python loop.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _windows(xpad: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, OH, OW, kh, kw) view of all kernel-sized windows."""
    view = sliding_window_view(xpad, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def _forward_dense(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    n, c, _, _ = x.shape
    co, _, kh, kw = w.shape
    xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xpad, kh, kw, stride)
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    y = cols @ w.reshape(co, -1).T
    return y.reshape(n, oh, ow, co).transpose(0, 3, 1, 2)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int, groups: int) -> np.ndarray:
    n, c, h, wd = x.shape
    co, cg, kh, kw = w.shape
    if pad:
        xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xpad = x
    if groups == 1:
        return np.ascontiguousarray(_forward_dense(x, w, stride, pad))
    if groups == c and co == c and cg == 1:
        win = _windows(xpad, kh, kw, stride)
        return np.einsum("nchwuv,cuv->nchw", win, w[:, 0], optimize=True)
    cog = co // groups
    parts = [
        _forward_dense(x[:, g * cg : (g + 1) * cg], w[g * cog : (g + 1) * cog], stride, pad)
        for g in range(groups)
    ]
    return np.ascontiguousarray(np.concatenate(parts, axis=1))


def _scatter_dilated(
    gy: np.ndarray, stride: int, pad: int, h: int, w: int, kh: int, kw: int
) -> np.ndarray:
    """Place output gradients on a (h + kh - 1, w + kw - 1) canvas so that a
    stride-1 correlation with the flipped kernel yields an exactly h x w
    input gradient. gy[oh, ow] lands at (kh-1-pad + oh*stride, ...); cells
    that fall outside the canvas only ever back up into zero padding."""
    n, co, oh, ow = gy.shape
    canvas = np.zeros((n, co, h + kh - 1, w + kw - 1), dtype=gy.dtype)
    rows = (kh - 1 - pad) + stride * np.arange(oh)
    cols = (kw - 1 - pad) + stride * np.arange(ow)
    rmask = (rows >= 0) & (rows < canvas.shape[2])
    cmask = (cols >= 0) & (cols < canvas.shape[3])
    canvas[:, :, rows[rmask][:, None], cols[cmask][None, :]] = gy[:, :, rmask][:, :, :, cmask]
    return canvas


def conv2d_input_grad(
    gy: np.ndarray, w: np.ndarray, x_shape: tuple, stride: int, pad: int, groups: int
) -> np.ndarray:
    """Gradient w.r.t. the convolution input: correlate the stride-dilated
    output gradient with the spatially flipped, channel-transposed kernel."""
    n, c, h, wd = x_shape
    co, cg, kh, kw = w.shape
    cog = co // groups
    gyp = _scatter_dilated(gy, stride, pad, h, wd, kh, kw)
    wflip = w[:, :, ::-1, ::-1]
    if groups == c and co == c and cg == 1:
        win = _windows(gyp, kh, kw, 1)
        return np.einsum("nchwuv,cuv->nchw", win, wflip[:, 0], optimize=True)
    gx = np.empty(x_shape, dtype=gy.dtype)
    for g in range(groups):
        wt = np.ascontiguousarray(wflip[g * cog : (g + 1) * cog].transpose(1, 0, 2, 3))
        gx[:, g * cg : (g + 1) * cg] = _forward_dense(gyp[:, g * cog : (g + 1) * cog], wt, 1, 0)
    return gx


def conv2d_weight_grad(
    gy: np.ndarray, x: np.ndarray, w_shape: tuple, stride: int, pad: int, groups: int
) -> np.ndarray:
    """Gradient w.r.t. the kernel: correlate input windows with the output gradient."""
    n, c, h, wd = x.shape
    co, cg, kh, kw = w_shape
    cog = co // groups
    oh, ow = gy.shape[2], gy.shape[3]
    xpad = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xpad, kh, kw, stride)[:, :, :oh, :ow]
    if groups == c and co == c and cg == 1:
        gw = np.einsum("ncij,ncijuv->cuv", gy, win, optimize=True)
        return np.ascontiguousarray(gw[:, None]).astype(gy.dtype, copy=False)
    gw = np.empty(w_shape, dtype=gy.dtype)
    for g in range(groups):
        wg = win[:, g * cg : (g + 1) * cg]  # (N, Cg, OH, OW, kh, kw)
        gg = gy[:, g * cog : (g + 1) * cog]  # (N, Cog, OH, OW)
        gw[g * cog : (g + 1) * cog] = np.einsum("noij,ncijuv->ocuv", gg, wg, optimize=True)
    return gw
