# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_kernels_py``.

Signatures and semantics match the numpy fallback; inputs are coerced to
C-contiguous float64.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, floor

cnp.import_array()

cdef double LOG_2PI = log(2.0 * 3.141592653589793)


def im2col(x, int k, int stride, int pad):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    out = np.empty((n, c * k * k, oh * ow), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        for oy in range(oh):
                            iy = oy * stride + i - pad
                            for ox in range(ow):
                                ix = ox * stride + j - pad
                                if iy < 0 or iy >= h or ix < 0 or ix >= w:
                                    ov[b, row, oy * ow + ox] = 0.0
                                else:
                                    ov[b, row, oy * ow + ox] = xv[b, ch, iy, ix]
    return out


def col2im(cols, int c, int h, int w, int k, int stride, int pad):
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t n = np.shape(cols)[0]
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(n, c * k * k, oh * ow)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] xv = out
    cdef Py_ssize_t b, ch, i, j, oy, ox, iy, ix, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        for oy in range(oh):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= w:
                                    continue
                                xv[b, ch, iy, ix] += cv[b, row, oy * ow + ox]
    return out


def gaussian_logpdf_rows(x, mu, logvar):
    cdef const double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] lv = np.ascontiguousarray(logvar, dtype=np.float64)
    cdef Py_ssize_t L = mv.shape[0], D = mv.shape[1]
    xa = np.ascontiguousarray(x, dtype=np.float64)
    if xa.ndim == 1:
        xa = np.broadcast_to(xa, (L, D))
    cdef const double[:, :] xv = xa
    out = np.empty(L, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t l, d
    cdef double acc, r
    with nogil:
        for l in range(L):
            acc = 0.0
            for d in range(D):
                r = xv[l, d] - mv[l, d]
                acc += lv[l, d] + r * r * exp(-lv[l, d])
            ov[l] = -0.5 * (D * LOG_2PI + acc)
    return out


cdef double _log_mean_exp(const double[::1] v) nogil:
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double m = v[0], s = 0.0
    for i in range(1, n):
        if v[i] > m:
            m = v[i]
    for i in range(n):
        s += exp(v[i] - m)
    return m + log(s / n)


def log_mean_exp(v):
    cdef const double[::1] vv = np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
    return _log_mean_exp(vv)


def log_rp(x, mu, logvar):
    cdef double[::1] rows = gaussian_logpdf_rows(x, mu, logvar)
    return _log_mean_exp(rows)


def bilinear_resize(img, int out_h, int out_w):
    cdef const double[:, ::1] iv = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t in_h = iv.shape[0], in_w = iv.shape[1]
    out = np.empty((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double sy_scale = <double>in_h / out_h, sx_scale = <double>in_w / out_w
    cdef Py_ssize_t oy, ox, y0, x0, y1, x1
    cdef double sy, sx, wy, wx, top, bot
    with nogil:
        for oy in range(out_h):
            sy = (oy + 0.5) * sy_scale - 0.5
            if sy < 0.0:
                sy = 0.0
            if sy > in_h - 1:
                sy = in_h - 1
            y0 = <Py_ssize_t>floor(sy)
            y1 = y0 + 1 if y0 + 1 < in_h else in_h - 1
            wy = sy - y0
            for ox in range(out_w):
                sx = (ox + 0.5) * sx_scale - 0.5
                if sx < 0.0:
                    sx = 0.0
                if sx > in_w - 1:
                    sx = in_w - 1
                x0 = <Py_ssize_t>floor(sx)
                x1 = x0 + 1 if x0 + 1 < in_w else in_w - 1
                wx = sx - x0
                # a + w*(b - a) keeps constant regions exact.
                top = iv[y0, x0] + wx * (iv[y0, x1] - iv[y0, x0])
                bot = iv[y1, x0] + wx * (iv[y1, x1] - iv[y1, x0])
                ov[oy, ox] = top + wy * (bot - top)
    return out
