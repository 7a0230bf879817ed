"""Independent reference implementations used as test oracles.

Nothing here calls into ``vaefqa`` numerics; only parameter names and the
architecture conventions (layer order, clamp bounds, sigmoid mean) are
shared.
"""

import math

import numpy as np

LOGVAR_MIN = 2.0 * math.log(1e-4)
LOGVAR_MAX = 2.0 * math.log(1e3)
WIDE = np.longdouble


def _lrelu(a, slope):
    return np.where(a > 0, a, slope * a)


def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def _affine(h, W, b):
    # W may carry a leading perturbation axis: (K, in, out) with b (K, out).
    if b.ndim == 2:
        b = b[:, None, :]
    return h @ W + b


def fc_vae_loss(params, hidden_count, X, eps, slope=0.01, dtype=WIDE):
    """Mean single-sample negative ELBO of the fully connected VAE.

    Written out layer by layer in ``dtype`` (long double by default).  Any
    parameter may be stacked with a leading axis of K perturbed copies; the
    result then has shape (K,).
    """
    p = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
    X = np.asarray(X, dtype=dtype)
    eps = np.asarray(eps, dtype=dtype)
    h = X
    for i in range(hidden_count):
        h = _lrelu(_affine(h, p[f"enc.fc{i}.W"], p[f"enc.fc{i}.b"]), slope)
    mu_z = _affine(h, p["enc.mu.W"], p["enc.mu.b"])
    lv_z = np.clip(_affine(h, p["enc.logvar.W"], p["enc.logvar.b"]), LOGVAR_MIN, LOGVAR_MAX)
    z = mu_z + eps * np.exp(lv_z / 2)
    g = z
    for i in range(hidden_count):
        g = _lrelu(_affine(g, p[f"dec.fc{i}.W"], p[f"dec.fc{i}.b"]), slope)
    mu_x = _sigmoid(_affine(g, p["dec.mu.W"], p["dec.mu.b"]))
    lv_x = np.clip(_affine(g, p["dec.logvar.W"], p["dec.logvar.b"]), LOGVAR_MIN, LOGVAR_MAX)
    two_pi = 2 * np.arccos(dtype(-1)) if dtype is WIDE else dtype(2 * math.pi)
    log_px = -0.5 * (np.log(two_pi) + lv_x + (X - mu_x) ** 2 / np.exp(lv_x))
    recon = log_px.sum(axis=-1)
    kl = 0.5 * (mu_z ** 2 + np.exp(lv_z) - 1 - lv_z).sum(axis=-1)
    return (kl - recon).mean(axis=-1)


def central_differences(loss, params, h=1e-4, dtype=WIDE, chunk=256):
    """Central-difference gradient of ``loss(params)`` for every entry.

    ``loss`` must accept one parameter stacked with a leading axis of
    perturbed copies and return one value per copy.
    """
    base = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    hh = dtype(h)
    out = {}
    for name, arr in base.items():
        n = arr.size
        g = np.zeros(n, dtype=dtype)
        for lo in range(0, n, chunk):
            idx = np.arange(lo, min(n, lo + chunk))
            stack = np.repeat(arr.reshape(1, -1), 2 * idx.size, axis=0)
            rows = np.arange(idx.size)
            stack[rows, idx] += hh
            stack[idx.size + rows, idx] -= hh
            trial = dict(base)
            trial[name] = stack.reshape((2 * idx.size,) + arr.shape)
            vals = loss(trial)
            g[idx] = (vals[: idx.size] - vals[idx.size:]) / (2 * hh)
        out[name] = g.reshape(arr.shape)
    return out


def relative_error(a, b, floor=1e-12):
    a = np.asarray(a, dtype=WIDE)
    b = np.asarray(b, dtype=WIDE)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / den


def conv2d_direct(x, w, stride, pad, bias=None):
    """Naive direct convolution, ``x`` (C, H, W), ``w`` (O, C, k, k)."""
    c, hgt, wid = x.shape
    o, _, k, _ = w.shape
    oh = (hgt + 2 * pad - k) // stride + 1
    ow = (wid + 2 * pad - k) // stride + 1
    y = np.zeros((o, oh, ow))
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0 if bias is None else float(bias[oc])
                for ic in range(c):
                    for u in range(k):
                        for v in range(k):
                            yy, xx = i * stride + u - pad, j * stride + v - pad
                            if 0 <= yy < hgt and 0 <= xx < wid:
                                acc += x[ic, yy, xx] * w[oc, ic, u, v]
                y[oc, i, j] = acc
    return y


def conv_transpose2d_direct(x, w, stride, pad):
    """Naive transposed convolution, ``x`` (C, H, W), ``w`` (C, O, k, k)."""
    c, hgt, wid = x.shape
    _, o, k, _ = w.shape
    oh = (hgt - 1) * stride - 2 * pad + k
    ow = (wid - 1) * stride - 2 * pad + k
    y = np.zeros((o, oh, ow))
    for ic in range(c):
        for i in range(hgt):
            for j in range(wid):
                for oc in range(o):
                    for u in range(k):
                        for v in range(k):
                            yy, xx = i * stride + u - pad, j * stride + v - pad
                            if 0 <= yy < oh and 0 <= xx < ow:
                                y[oc, yy, xx] += x[ic, i, j] * w[ic, oc, u, v]
    return y


def conv_vae_eval(params, buffers, arch, x, z=None):
    """Evaluation-mode forward of the conv VAE for one image.

    Returns ``(mu_z, logvar_z)`` and, if ``z`` is given, ``(mu_x, logvar_x)``
    decoded from it.
    """
    slope, k, eps_bn = arch.leaky_slope, arch.kernel, arch.bn_eps
    pad = (k - 2) // 2

    def bn(h, name):
        m = buffers[name + ".running_mean"][:, None, None]
        v = buffers[name + ".running_var"][:, None, None]
        g = params[name + ".gamma"][:, None, None]
        b = params[name + ".beta"][:, None, None]
        return g * (h - m) / np.sqrt(v + eps_bn) + b

    p = {kk: np.asarray(v, dtype=np.float64) for kk, v in params.items()}
    buffers = {kk: np.asarray(v, dtype=np.float64) for kk, v in buffers.items()}
    params = p
    h = np.asarray(x, dtype=np.float64).reshape(1, arch.input_side, arch.input_side)
    for i in range(arch.block_count):
        h = _lrelu(bn(conv2d_direct(h, p[f"enc.conv{i}.W"], 2, pad), f"enc.bn{i}"), slope)
    f = h.reshape(-1)
    mu_z = f @ p["enc.mu.W"] + p["enc.mu.b"]
    lv_z = np.clip(f @ p["enc.logvar.W"] + p["enc.logvar.b"], LOGVAR_MIN, LOGVAR_MAX)
    if z is None:
        return mu_z, lv_z
    s0 = arch.input_side // 2 ** arch.block_count
    g = _lrelu(np.asarray(z) @ p["dec.fc_in.W"] + p["dec.fc_in.b"], slope)
    g = g.reshape(arch.widths[-1], s0, s0)
    for i in range(arch.block_count):
        g = _lrelu(bn(conv_transpose2d_direct(g, p[f"dec.deconv{i}.W"], 2, pad), f"dec.bn{i}"), slope)
    mu_x = _sigmoid(conv2d_direct(g, p["dec.mu.W"], 1, 0, p["dec.mu.b"])).reshape(-1)
    lv_x = np.clip(conv2d_direct(g, p["dec.logvar.W"], 1, 0, p["dec.logvar.b"]).reshape(-1),
                   LOGVAR_MIN, LOGVAR_MAX)
    return (mu_z, lv_z), (mu_x, lv_x)


def fc_vae_eval(params, arch, x, z=None):
    p = {kk: np.asarray(v, dtype=np.float64) for kk, v in params.items()}
    h = np.asarray(x, dtype=np.float64).reshape(-1)
    for i in range(arch.block_count):
        h = _lrelu(h @ p[f"enc.fc{i}.W"] + p[f"enc.fc{i}.b"], arch.leaky_slope)
    mu_z = h @ p["enc.mu.W"] + p["enc.mu.b"]
    lv_z = np.clip(h @ p["enc.logvar.W"] + p["enc.logvar.b"], LOGVAR_MIN, LOGVAR_MAX)
    if z is None:
        return mu_z, lv_z
    g = np.asarray(z, dtype=np.float64)
    for i in range(arch.block_count):
        g = _lrelu(g @ p[f"dec.fc{i}.W"] + p[f"dec.fc{i}.b"], arch.leaky_slope)
    mu_x = _sigmoid(g @ p["dec.mu.W"] + p["dec.mu.b"])
    lv_x = np.clip(g @ p["dec.logvar.W"] + p["dec.logvar.b"], LOGVAR_MIN, LOGVAR_MAX)
    return (mu_z, lv_z), (mu_x, lv_x)


def scalar_normal_logpdf(x, mu, sigma):
    return math.log(math.exp(-((x - mu) ** 2) / (2 * sigma * sigma)) / (sigma * math.sqrt(2 * math.pi)))


def quantile_by_enumeration(samples, p):
    """Smallest candidate v among the samples with #{s <= v}/N >= p."""
    n = len(samples)
    best = None
    for v in samples:
        if sum(1 for s in samples if s <= v) / n >= p - 1e-12:
            if best is None or v < best:
                best = v
    return best


def fnmr_by_enumeration(dist, qual, f, r):
    d_t = quantile_by_enumeration(list(dist), 1 - f)
    if r == 0:
        kept = list(range(len(dist)))
    else:
        thr = quantile_by_enumeration(list(qual), r)
        kept = [i for i in range(len(dist)) if not qual[i] < thr]
    return sum(1 for i in kept if dist[i] >= d_t) / len(kept)


def bilinear_pixel(img, oy, ox, out_h, out_w):
    """One output pixel of half-pixel-centred bilinear resampling."""
    in_h, in_w = len(img), len(img[0])
    sy = min(max((oy + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
    sx = min(max((ox + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
    y0, x0 = int(math.floor(sy)), int(math.floor(sx))
    y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
    fy, fx = sy - y0, sx - x0
    return ((1 - fy) * ((1 - fx) * img[y0][x0] + fx * img[y0][x1])
            + fy * ((1 - fx) * img[y1][x0] + fx * img[y1][x1]))
