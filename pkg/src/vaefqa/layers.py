"""Minimal layer kit with hand-written backward passes.

Every layer is a small stateless object describing its parameters; values
live in a flat ``{name: ndarray}`` dict owned by the model.  ``forward``
returns ``(y, cache)`` and ``backward`` maps an output gradient to
``(input_gradient, {param_name: gradient})``.  Computation is float64.
"""

import math

import numpy as np

from . import kernels


class Layer:
    def param_specs(self):
        """Yield ``(name, shape, fan_in)`` for every trainable parameter."""
        return []

    def buffer_specs(self):
        """Yield ``(name, shape, initial_value)`` for non-trainable state."""
        return []

    def forward(self, p, buf, x, train):
        raise NotImplementedError

    def backward(self, p, cache, gy):
        raise NotImplementedError

    def buffer_update(self, cache):
        """Running-state update produced by a training-mode forward."""
        return {}


class Linear(Layer):
    def __init__(self, name, n_in, n_out):
        self.name, self.n_in, self.n_out = name, n_in, n_out
        self.w, self.b = name + ".W", name + ".b"

    def param_specs(self):
        return [(self.w, (self.n_in, self.n_out), self.n_in), (self.b, (self.n_out,), self.n_in)]

    def forward(self, p, buf, x, train):
        return x @ p[self.w] + p[self.b], x

    def backward(self, p, x, gy):
        return gy @ p[self.w].T, {self.w: x.T @ gy, self.b: gy.sum(axis=0)}


class LeakyReLU(Layer):
    def __init__(self, slope):
        self.slope = slope

    def forward(self, p, buf, x, train):
        pos = x > 0
        return np.where(pos, x, self.slope * x), pos

    def backward(self, p, pos, gy):
        return np.where(pos, gy, self.slope * gy), {}


class Reshape(Layer):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, p, buf, x, train):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, p, in_shape, gy):
        return gy.reshape(in_shape), {}


class Conv2d(Layer):
    """Strided 2-D convolution via im2col; weights ``(C_out, C_in, k, k)``."""

    def __init__(self, name, c_in, c_out, k, stride, pad, bias):
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.k, self.stride, self.pad, self.bias = k, stride, pad, bias
        self.w, self.b = name + ".W", name + ".b"

    def param_specs(self):
        fan_in = self.c_in * self.k * self.k
        specs = [(self.w, (self.c_out, self.c_in, self.k, self.k), fan_in)]
        if self.bias:
            specs.append((self.b, (self.c_out,), fan_in))
        return specs

    def forward(self, p, buf, x, train):
        n, _, h, w = x.shape
        oh = (h + 2 * self.pad - self.k) // self.stride + 1
        ow = (w + 2 * self.pad - self.k) // self.stride + 1
        cols = kernels.im2col(x, self.k, self.stride, self.pad)
        w2 = p[self.w].reshape(self.c_out, -1)
        y = np.matmul(w2, cols)
        if self.bias:
            y += p[self.b][None, :, None]
        return y.reshape(n, self.c_out, oh, ow), (cols, x.shape)

    def backward(self, p, cache, gy):
        cols, (n, c, h, w) = cache
        gy2 = gy.reshape(n, self.c_out, -1)
        w2 = p[self.w].reshape(self.c_out, -1)
        grads = {self.w: np.tensordot(gy2, cols, axes=([0, 2], [0, 2])).reshape(p[self.w].shape)}
        if self.bias:
            grads[self.b] = gy2.sum(axis=(0, 2))
        gcols = np.matmul(w2.T, gy2)
        gx = kernels.col2im(gcols, c, h, w, self.k, self.stride, self.pad)
        return gx, grads


class ConvTranspose2d(Layer):
    """Transposed convolution (adjoint of :class:`Conv2d`); weights ``(C_in, C_out, k, k)``."""

    def __init__(self, name, c_in, c_out, k, stride, pad):
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.k, self.stride, self.pad = k, stride, pad
        self.w = name + ".W"

    def param_specs(self):
        return [(self.w, (self.c_in, self.c_out, self.k, self.k), self.c_out * self.k * self.k)]

    def out_side(self, side):
        return (side - 1) * self.stride - 2 * self.pad + self.k

    def forward(self, p, buf, x, train):
        n, _, h, w = x.shape
        oh, ow = self.out_side(h), self.out_side(w)
        xr = x.reshape(n, self.c_in, h * w)
        w2 = p[self.w].reshape(self.c_in, -1)
        cols = np.matmul(w2.T, xr)
        y = kernels.col2im(cols, self.c_out, oh, ow, self.k, self.stride, self.pad)
        return y, (xr, x.shape)

    def backward(self, p, cache, gy):
        xr, in_shape = cache
        gcols = kernels.im2col(gy, self.k, self.stride, self.pad)
        w2 = p[self.w].reshape(self.c_in, -1)
        gw = np.tensordot(xr, gcols, axes=([0, 2], [0, 2])).reshape(p[self.w].shape)
        gx = np.matmul(w2, gcols).reshape(in_shape)
        return gx, {self.w: gw}


class BatchNorm2d(Layer):
    """Per-channel affine normalisation.

    Training mode normalises with batch statistics and reports an EMA update
    for the running statistics; evaluation mode uses the frozen running
    statistics, so the output for one image never depends on other images.
    """

    def __init__(self, name, channels, momentum, eps):
        self.name, self.channels = name, channels
        self.momentum, self.eps = momentum, eps
        self.gamma, self.beta = name + ".gamma", name + ".beta"
        self.rmean, self.rvar = name + ".running_mean", name + ".running_var"

    def param_specs(self):
        return [(self.gamma, (self.channels,), None), (self.beta, (self.channels,), None)]

    def buffer_specs(self):
        return [(self.rmean, (self.channels,), 0.0), (self.rvar, (self.channels,), 1.0)]

    def forward(self, p, buf, x, train):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
        else:
            mean, var = buf[self.rmean], buf[self.rvar]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = p[self.gamma][None, :, None, None] * xhat + p[self.beta][None, :, None, None]
        m = x.shape[0] * x.shape[2] * x.shape[3]
        return y, (xhat, inv_std, train, mean, var, m)

    def backward(self, p, cache, gy):
        xhat, inv_std, train, _, _, m = cache
        grads = {self.gamma: (gy * xhat).sum(axis=(0, 2, 3)), self.beta: gy.sum(axis=(0, 2, 3))}
        gxhat = gy * p[self.gamma][None, :, None, None]
        if train:
            s1 = gxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            s2 = (gxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None]
            gx = (gxhat - s1 / m - xhat * s2 / m) * inv_std[None, :, None, None]
        else:
            gx = gxhat * inv_std[None, :, None, None]
        return gx, grads

    def buffer_update(self, cache):
        _, _, train, mean, var, m = cache
        if not train:
            return {}
        unbiased = var * (m / (m - 1)) if m > 1 else var
        return {self.rmean: mean, self.rvar: unbiased}

    def apply_update(self, buf, update):
        mom = self.momentum
        return {
            self.rmean: (1 - mom) * buf[self.rmean] + mom * update[self.rmean],
            self.rvar: (1 - mom) * buf[self.rvar] + mom * update[self.rvar],
        }


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def param_specs(self):
        return [s for layer in self.layers for s in layer.param_specs()]

    def buffer_specs(self):
        return [s for layer in self.layers for s in layer.buffer_specs()]

    def forward(self, p, buf, x, train):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(p, buf, x, train)
            caches.append(c)
        return x, caches

    def backward(self, p, caches, gy, grads):
        for layer, c in zip(reversed(self.layers), reversed(caches)):
            gy, g = layer.backward(p, c, gy)
            grads.update(g)
        return gy

    def buffer_updates(self, buf, caches):
        new = {}
        for layer, c in zip(self.layers, caches):
            upd = layer.buffer_update(c)
            if upd:
                new.update(layer.apply_update(buf, upd))
        return new


def init_value(shape, fan_in, rng, name):
    """Scaled-uniform initialisation ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith(".beta"):
        return np.zeros(shape)
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
