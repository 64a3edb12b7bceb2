# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled grouped-convolution kernels (cross-correlation convention).

Semantics match mfcmnet.kernels._reference exactly: zero padding, floor
output sizing, no kernel flip. Accumulation runs in double precision for
both float32 and float64 buffers.
"""

import numpy as np


ctypedef fused real_t:
    float
    double


cdef void _forward(const real_t[:, :, :, ::1] x, const real_t[:, :, :, ::1] w,
                   real_t[:, :, :, ::1] out, int stride, int pad) noexcept nogil:
    cdef Py_ssize_t n_batch = x.shape[0], c_in = x.shape[1], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], cg = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = out.shape[2], ow = out.shape[3]
    cdef Py_ssize_t groups = c_in // cg
    cdef Py_ssize_t cog = c_out // groups
    cdef Py_ssize_t n, co, oy, ox, cil, ci0, u, v, iy, ix, iy0, ix0
    cdef double acc
    for n in range(n_batch):
        for co in range(c_out):
            ci0 = (co // cog) * cg
            for oy in range(oh):
                iy0 = oy * stride - pad
                for ox in range(ow):
                    ix0 = ox * stride - pad
                    acc = 0.0
                    for cil in range(cg):
                        for u in range(kh):
                            iy = iy0 + u
                            if 0 <= iy < h:
                                for v in range(kw):
                                    ix = ix0 + v
                                    if 0 <= ix < wid:
                                        acc += (<double> x[n, ci0 + cil, iy, ix]) * (<double> w[co, cil, u, v])
                    out[n, co, oy, ox] = <real_t> acc


cdef void _input_grad(const real_t[:, :, :, ::1] gy, const real_t[:, :, :, ::1] w,
                      real_t[:, :, :, ::1] gx, int stride, int pad) noexcept nogil:
    cdef Py_ssize_t n_batch = gx.shape[0], c_in = gx.shape[1], h = gx.shape[2], wid = gx.shape[3]
    cdef Py_ssize_t c_out = w.shape[0], cg = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t groups = c_in // cg
    cdef Py_ssize_t cog = c_out // groups
    cdef Py_ssize_t n, ci, cil, co0, col, iy, ix, u, v, t, t2, oy, ox
    cdef double acc
    for n in range(n_batch):
        for ci in range(c_in):
            cil = ci % cg
            co0 = (ci // cg) * cog
            for iy in range(h):
                for ix in range(wid):
                    acc = 0.0
                    for col in range(cog):
                        for u in range(kh):
                            t = iy + pad - u
                            if t >= 0 and t % stride == 0:
                                oy = t // stride
                                if oy < oh:
                                    for v in range(kw):
                                        t2 = ix + pad - v
                                        if t2 >= 0 and t2 % stride == 0:
                                            ox = t2 // stride
                                            if ox < ow:
                                                acc += (<double> gy[n, co0 + col, oy, ox]) * (<double> w[co0 + col, cil, u, v])
                    gx[n, ci, iy, ix] = <real_t> acc


cdef void _weight_grad(const real_t[:, :, :, ::1] gy, const real_t[:, :, :, ::1] x,
                       real_t[:, :, :, ::1] gw, int stride, int pad) noexcept nogil:
    cdef Py_ssize_t n_batch = x.shape[0], c_in = x.shape[1], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t c_out = gw.shape[0], cg = gw.shape[1], kh = gw.shape[2], kw = gw.shape[3]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t groups = c_in // cg
    cdef Py_ssize_t cog = c_out // groups
    cdef Py_ssize_t co, cil, ci, u, v, n, oy, ox, iy, ix
    cdef double acc
    for co in range(c_out):
        for cil in range(cg):
            ci = (co // cog) * cg + cil
            for u in range(kh):
                for v in range(kw):
                    acc = 0.0
                    for n in range(n_batch):
                        for oy in range(oh):
                            iy = oy * stride - pad + u
                            if 0 <= iy < h:
                                for ox in range(ow):
                                    ix = ox * stride - pad + v
                                    if 0 <= ix < wid:
                                        acc += (<double> gy[n, co, oy, ox]) * (<double> x[n, ci, iy, ix])
                    gw[co, cil, u, v] = <real_t> acc


def _as_c4(a):
    return np.ascontiguousarray(a)


def conv2d_forward(x, w, int stride, int pad, int groups):
    x = _as_c4(x)
    w = _as_c4(w)
    cdef Py_ssize_t oh = (x.shape[2] + 2 * pad - w.shape[2]) // stride + 1
    cdef Py_ssize_t ow = (x.shape[3] + 2 * pad - w.shape[3]) // stride + 1
    out = np.empty((x.shape[0], w.shape[0], oh, ow), dtype=x.dtype)
    cdef double[:, :, :, ::1] xd, wd, od
    cdef float[:, :, :, ::1] xf, wf, of
    if x.dtype == np.float64:
        xd, wd, od = x, w, out
        with nogil:
            _forward(xd, wd, od, stride, pad)
    else:
        xf, wf, of = x, w, out
        with nogil:
            _forward(xf, wf, of, stride, pad)
    return out


def conv2d_input_grad(gy, w, x_shape, int stride, int pad, int groups):
    gy = _as_c4(gy)
    w = _as_c4(w)
    gx = np.empty(tuple(x_shape), dtype=gy.dtype)
    cdef double[:, :, :, ::1] gyd, wd, gxd
    cdef float[:, :, :, ::1] gyf, wf, gxf
    if gy.dtype == np.float64:
        gyd, wd, gxd = gy, w, gx
        with nogil:
            _input_grad(gyd, wd, gxd, stride, pad)
    else:
        gyf, wf, gxf = gy, w, gx
        with nogil:
            _input_grad(gyf, wf, gxf, stride, pad)
    return gx


def conv2d_weight_grad(gy, x, w_shape, int stride, int pad, int groups):
    gy = _as_c4(gy)
    x = _as_c4(x)
    gw = np.empty(tuple(w_shape), dtype=gy.dtype)
    cdef double[:, :, :, ::1] gyd, xd, gwd
    cdef float[:, :, :, ::1] gyf, xf, gwf
    if gy.dtype == np.float64:
        gyd, xd, gwd = gy, x, gw
        with nogil:
            _weight_grad(gyd, xd, gwd, stride, pad)
    else:
        gyf, xf, gwf = gy, x, gw
        with nogil:
            _weight_grad(gyf, xf, gwf, stride, pad)
    return gw
