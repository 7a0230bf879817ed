"""Pure-numpy implementations of the hot kernels.

These are the reference versions; ``_kernels.pyx`` mirrors every signature.
All arrays are float64 and C-contiguous on return.
"""

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def im2col(x, k, stride, pad):
    """Unfold ``(N, C, H, W)`` into ``(N, C*k*k, OH*OW)`` patch columns."""
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, oh, ow), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * k * k, oh * ow)


def col2im(cols, c, h, w, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back to ``(N, C, H, W)``."""
    n = cols.shape[0]
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, c, k, k, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    return np.ascontiguousarray(xp[:, :, pad:pad + h, pad:pad + w])


def gaussian_logpdf_rows(x, mu, logvar):
    """Row-wise diagonal Gaussian log density.

    ``mu`` and ``logvar`` are ``(L, D)``; ``x`` is ``(D,)`` or ``(L, D)``.
    Returns an ``(L,)`` vector.
    """
    r = x - mu
    return -0.5 * (mu.shape[1] * LOG_2PI + np.sum(logvar + r * r * np.exp(-logvar), axis=1))


def log_mean_exp(v):
    v = np.asarray(v, dtype=np.float64)
    m = float(np.max(v))
    return m + float(np.log(np.mean(np.exp(v - m))))


def log_rp(x, mu, logvar):
    """log of the mean over rows of N(x | mu_l, exp(logvar_l))."""
    return log_mean_exp(gaussian_logpdf_rows(x, mu, logvar))


def bilinear_resize(img, out_h, out_w):
    """Half-pixel-centred bilinear resampling of a 2-D float image."""
    in_h, in_w = img.shape
    ys = _source_coords(in_h, out_h)
    xs = _source_coords(in_w, out_w)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    # a + w*(b - a) keeps constant regions exact.
    top = img[y0][:, x0] + wx * (img[y0][:, x1] - img[y0][:, x0])
    bot = img[y1][:, x0] + wx * (img[y1][:, x1] - img[y1][:, x0])
    return np.ascontiguousarray(top + wy * (bot - top))


def _source_coords(n_in, n_out):
    scale = n_in / n_out
    s = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    return np.clip(s, 0.0, n_in - 1)
