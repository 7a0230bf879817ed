"""Variational autoencoder with analytic gradients.

Two architectures share one descriptor:

* ``conv``: ``block_count`` blocks of strided convolution, batch
  normalisation and leaky ReLU, followed by two fully connected heads
  (posterior mean and log-variance).  The decoder mirrors it with
  transposed convolutions and two per-pixel heads (likelihood mean and
  log-variance).
* ``fc``: a small multilayer perceptron with the same heads, used where
  speed matters (finite-difference checks, CI).

Parameters are stored as float32 (the checkpoint precision); every
computation upcasts to float64.
"""

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    LeakyReLU,
    Linear,
    Reshape,
    Sequential,
    init_value,
)
from .numerics import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    GaussianDiag,
    gaussian_log_density,
    kl_to_standard_normal,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchDescriptor:
    kind: str = "conv"
    input_side: int = 64
    channels: int = 1
    block_count: int = 5
    latent_dim: int = 64
    widths: tuple = (16, 32, 64, 128, 256)
    leaky_slope: float = 0.01
    kernel: int = 4
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.kind not in ("conv", "fc"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.channels != 1:
            raise ValueError("only single-channel (grayscale) input is supported")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.block_count < 1 or len(self.widths) != self.block_count:
            raise ValueError("widths must have exactly block_count entries")
        if self.kind == "conv" and self.input_side % (2 ** self.block_count):
            raise ValueError(
                f"input_side {self.input_side} is not divisible by 2**{self.block_count}"
            )

    @classmethod
    def fc(cls, input_side=16, latent_dim=8, hidden=(32,), leaky_slope=0.01):
        hidden = tuple(hidden)
        return cls(kind="fc", input_side=input_side, block_count=len(hidden),
                   latent_dim=latent_dim, widths=hidden, leaky_slope=leaky_slope)

    @property
    def input_dim(self):
        return self.input_side * self.input_side * self.channels

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "widths": tuple(d["widths"])})


class _Network:
    """Layer graph for one descriptor."""

    def __init__(self, arch):
        self.arch = arch
        a, slope, lat, side = arch, arch.leaky_slope, arch.latent_dim, arch.input_side
        d = arch.input_dim
        if a.kind == "fc":
            enc, c_in = [], d
            for i, w in enumerate(a.widths):
                enc += [Linear(f"enc.fc{i}", c_in, w), LeakyReLU(slope)]
                c_in = w
            dec, c_in = [], lat
            for i, w in enumerate(reversed(a.widths)):
                dec += [Linear(f"dec.fc{i}", c_in, w), LeakyReLU(slope)]
                c_in = w
            self.enc_trunk = Sequential(enc)
            self.enc_mu = Sequential([Linear("enc.mu", a.widths[-1], lat)])
            self.enc_lv = Sequential([Linear("enc.logvar", a.widths[-1], lat)])
            self.dec_trunk = Sequential(dec)
            self.dec_mu = Sequential([Linear("dec.mu", a.widths[0], d)])
            self.dec_lv = Sequential([Linear("dec.logvar", a.widths[0], d)])
            return

        k = a.kernel
        enc, c_in, s = [Reshape((1, side, side))], 1, side
        for i, w in enumerate(a.widths):
            enc += [
                Conv2d(f"enc.conv{i}", c_in, w, k, 2, (k - 2) // 2, bias=False),
                BatchNorm2d(f"enc.bn{i}", w, a.bn_momentum, a.bn_eps),
                LeakyReLU(slope),
            ]
            c_in, s = w, s // 2
        enc.append(Reshape((c_in * s * s,)))
        feat = c_in * s * s
        self.enc_trunk = Sequential(enc)
        self.enc_mu = Sequential([Linear("enc.mu", feat, lat)])
        self.enc_lv = Sequential([Linear("enc.logvar", feat, lat)])

        s0, c0 = s, a.widths[-1]
        dec = [Linear("dec.fc_in", lat, c0 * s0 * s0), LeakyReLU(slope), Reshape((c0, s0, s0))]
        outs = list(reversed(a.widths[:-1])) + [a.widths[0]]
        c_in = c0
        for i, w in enumerate(outs):
            dec += [
                ConvTranspose2d(f"dec.deconv{i}", c_in, w, k, 2, (k - 2) // 2),
                BatchNorm2d(f"dec.bn{i}", w, a.bn_momentum, a.bn_eps),
                LeakyReLU(slope),
            ]
            c_in = w
        self.dec_trunk = Sequential(dec)
        self.dec_mu = Sequential([Conv2d("dec.mu", c_in, 1, 1, 1, 0, bias=True), Reshape((d,))])
        self.dec_lv = Sequential([Conv2d("dec.logvar", c_in, 1, 1, 1, 0, bias=True), Reshape((d,))])

    @property
    def parts(self):
        return (self.enc_trunk, self.enc_mu, self.enc_lv, self.dec_trunk, self.dec_mu, self.dec_lv)

    def param_specs(self):
        return [s for part in self.parts for s in part.param_specs()]

    def buffer_specs(self):
        return [s for part in self.parts for s in part.buffer_specs()]


_NETWORKS = {}


def network(arch):
    net = _NETWORKS.get(arch)
    if net is None:
        net = _NETWORKS[arch] = _Network(arch)
    return net


@dataclass
class VaeModel:
    """Encoder/decoder parameters plus running normalisation statistics."""

    arch: ArchDescriptor
    params: dict
    buffers: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @classmethod
    def initialize(cls, arch, seed=0):
        net = network(arch)
        rng = np.random.default_rng(seed)
        params = {
            name: init_value(shape, fan_in, rng, name).astype(np.float32)
            for name, shape, fan_in in net.param_specs()
        }
        buffers = {
            name: np.full(shape, value, dtype=np.float32)
            for name, shape, value in net.buffer_specs()
        }
        return cls(arch, params, buffers)

    @classmethod
    def zeros(cls, arch):
        net = network(arch)
        params = {n: np.zeros(s, dtype=np.float32) for n, s, _ in net.param_specs()}
        buffers = {n: np.full(s, v, dtype=np.float32) for n, s, v in net.buffer_specs()}
        return cls(arch, params, buffers)

    def copy(self):
        return VaeModel(
            self.arch,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.version,
        )

    def param_count(self):
        return sum(v.size for v in self.params.values())

    def params64(self):
        return {k: v.astype(np.float64) for k, v in self.params.items()}

    def buffers64(self):
        return {k: v.astype(np.float64) for k, v in self.buffers.items()}


def expected_param_count(arch):
    """Trainable parameter count derived from the layer shapes alone."""
    lat, d, ws, k = arch.latent_dim, arch.input_dim, arch.widths, arch.kernel
    if arch.kind == "fc":
        enc = sum(a * b + b for a, b in zip((d,) + ws[:-1], ws))
        dec_widths = tuple(reversed(ws))
        dec = sum(a * b + b for a, b in zip((lat,) + dec_widths[:-1], dec_widths))
        heads = 2 * (ws[-1] * lat + lat) + 2 * (ws[0] * d + d)
        return enc + dec + heads
    s_min = arch.input_side // 2 ** arch.block_count
    enc = sum(a * b * k * k + 2 * b for a, b in zip((1,) + ws[:-1], ws))
    feat = ws[-1] * s_min * s_min
    outs = list(reversed(ws[:-1])) + [ws[0]]
    dec = lat * feat + feat
    dec += sum(a * b * k * k + 2 * b for a, b in zip([ws[-1]] + outs[:-1], outs))
    heads = 2 * (feat * lat + lat) + 2 * (ws[0] + 1)
    return enc + dec + heads


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _as_batch(arch, x, name="x"):
    a = np.asarray(x, dtype=np.float64)
    d, side = arch.input_dim, arch.input_side
    ok = a.ndim >= 1 and (a.shape[-1] == d or a.shape[-2:] == (side, side))
    if not ok:
        raise ValueError(f"{name} shape {a.shape} does not match input side {side}")
    return a.reshape(-1, d)


def _check_image_batch(arch, x):
    b = _as_batch(arch, x)
    if not np.all(np.isfinite(b)) or b.min(initial=0.0) < 0.0 or b.max(initial=0.0) > 1.0:
        raise ValueError("image values must be finite and within [0, 1]")
    return b


def _encode(net, p, buf, X, train):
    h, c_trunk = net.enc_trunk.forward(p, buf, X, train)
    mu, c_mu = net.enc_mu.forward(p, buf, h, train)
    lv_raw, c_lv = net.enc_lv.forward(p, buf, h, train)
    return mu, lv_raw, (c_trunk, c_mu, c_lv)


def _decode(net, p, buf, Z, train):
    h, c_trunk = net.dec_trunk.forward(p, buf, Z, train)
    a, c_mu = net.dec_mu.forward(p, buf, h, train)
    lv_raw, c_lv = net.dec_lv.forward(p, buf, h, train)
    return _sigmoid(a), lv_raw, (c_trunk, c_mu, c_lv)


def encode_batch(model, X):
    """Posterior parameters ``(mu, logvar)`` for a batch, evaluation mode."""
    net = network(model.arch)
    X = _as_batch(model.arch, X)
    mu, lv_raw, _ = _encode(net, model.params64(), model.buffers64(), X, False)
    return mu, np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)


def decode_batch(model, Z):
    """Likelihood parameters ``(mu, logvar)`` for a batch of latents."""
    net = network(model.arch)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] != model.arch.latent_dim:
        raise ValueError(f"latent batch shape {Z.shape} does not match latent_dim "
                         f"{model.arch.latent_dim}")
    mu, lv_raw, _ = _decode(net, model.params64(), model.buffers64(), Z, False)
    return mu, np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)


def encode(model, x):
    X = _check_image_batch(model.arch, x)
    if X.shape[0] != 1:
        raise ValueError("encode expects a single image")
    mu, lv = encode_batch(model, X)
    return GaussianDiag.from_logvar(mu[0], lv[0])


def decode(model, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.arch.latent_dim,):
        raise ValueError(f"latent length {z.shape} != {model.arch.latent_dim}")
    mu, lv = decode_batch(model, z[None, :])
    return GaussianDiag.from_logvar(mu[0], lv[0])


def reparameterize(q, epsilon):
    eps = np.asarray(epsilon, dtype=np.float64)
    if eps.shape != q.mu.shape:
        raise ValueError(f"epsilon shape {eps.shape} != {q.mu.shape}")
    return q.mu + eps * q.sigma


def elbo_loss(model, x, epsilon):
    """Single-sample negative ELBO for one image: ``-(recon - kl)``."""
    q = encode(model, x)
    z = reparameterize(q, epsilon)
    px = decode(model, z)
    xv = np.asarray(x, dtype=np.float64).reshape(-1)
    recon = gaussian_log_density(xv, px.mu, px.sigma)
    kl = kl_to_standard_normal(q)
    return -(recon - kl), {"recon": recon, "kl": kl}


@dataclass
class ParamGradients:
    grads: dict
    loss: float
    recon: np.ndarray
    kl: np.ndarray
    buffers: dict


def example_noise(seed, X, latent_dim):
    """Per-example reparameterisation noise keyed on ``(seed, image bytes)``.

    Identical images in one batch receive identical noise, so a batch's mean
    gradient does not depend on duplication or ordering.
    """
    eps = np.empty((X.shape[0], latent_dim))
    for i, row in enumerate(X):
        digest = hashlib.blake2b(np.ascontiguousarray(row).tobytes(), digest_size=8).digest()
        eps[i] = np.random.default_rng([int(seed), int.from_bytes(digest, "little")]) \
            .standard_normal(latent_dim)
    return eps


def batch_objective(arch, p, buf, X, eps, train=True, want_grad=True):
    """Mean negative ELBO over a batch and its gradient.

    ``p`` and ``buf`` are float64 dicts.  Returns ``ParamGradients``; with
    ``want_grad=False`` the gradient dict is empty.
    """
    net = network(arch)
    n = X.shape[0]
    mu_z, lvz_raw, enc_c = _encode(net, p, buf, X, train)
    lvz = np.clip(lvz_raw, LOGVAR_MIN, LOGVAR_MAX)
    sig_z = np.exp(0.5 * lvz)
    Z = mu_z + eps * sig_z
    mu_x, lvx_raw, dec_c = _decode(net, p, buf, Z, train)
    lvx = np.clip(lvx_raw, LOGVAR_MIN, LOGVAR_MAX)

    recon = kernels.gaussian_logpdf_rows(X, mu_x, lvx)
    var_z = np.exp(lvz)
    kl = 0.5 * np.sum(mu_z * mu_z + var_z - 1.0 - lvz, axis=1)
    loss = float(np.mean(kl - recon))

    new_buf = {}
    for part, caches in zip((net.enc_trunk, net.dec_trunk), (enc_c[0], dec_c[0])):
        new_buf.update(part.buffer_updates(buf, caches))

    grads = {}
    if want_grad:
        inv_var_x = np.exp(-lvx)
        resid = X - mu_x
        g_mu_x = -resid * inv_var_x / n
        g_a = g_mu_x * mu_x * (1.0 - mu_x)
        g_lvx = (0.5 - 0.5 * resid * resid * inv_var_x) / n
        g_lvx *= (lvx_raw > LOGVAR_MIN) & (lvx_raw < LOGVAR_MAX)
        g_h = net.dec_mu.backward(p, dec_c[1], g_a, grads)
        g_h = g_h + net.dec_lv.backward(p, dec_c[2], g_lvx, grads)
        g_z = net.dec_trunk.backward(p, dec_c[0], g_h, grads)

        g_mu_z = g_z + mu_z / n
        g_lvz = 0.5 * g_z * eps * sig_z + 0.5 * (var_z - 1.0) / n
        g_lvz *= (lvz_raw > LOGVAR_MIN) & (lvz_raw < LOGVAR_MAX)
        g_h = net.enc_mu.backward(p, enc_c[1], g_mu_z, grads)
        g_h = g_h + net.enc_lv.backward(p, enc_c[2], g_lvz, grads)
        net.enc_trunk.backward(p, enc_c[0], g_h, grads)
    return ParamGradients(grads, loss, recon, kl, new_buf)


def gradient(model, batch, seed, epsilon=None, train=True):
    """Analytic gradient of the mean batch loss for every parameter.

    Noise comes from :func:`example_noise` unless ``epsilon`` is given.  In
    training mode normalisation layers use batch statistics and the
    returned ``buffers`` hold the updated running statistics.
    """
    X = _check_image_batch(model.arch, np.asarray(batch, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if epsilon is None:
        eps = example_noise(seed, X, model.arch.latent_dim)
    else:
        eps = np.asarray(epsilon, dtype=np.float64).reshape(X.shape[0], model.arch.latent_dim)
    return batch_objective(model.arch, model.params64(), model.buffers64(), X, eps, train)


def log_reconstruction_probability(model, x, L=10, seed=0):
    """Natural log of the Monte-Carlo reconstruction probability of ``x``.

    Draws ``L`` latents from the posterior, decodes each to a diagonal
    Gaussian and returns the log of the averaged likelihood of ``x``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    X = _check_image_batch(model.arch, x)
    if X.shape[0] != 1:
        raise ValueError("expected a single image")
    mu_z, lvz = encode_batch(model, X)
    eps = np.random.default_rng(seed).standard_normal((L, model.arch.latent_dim))
    Z = mu_z + eps * np.exp(0.5 * lvz)
    mu_x, lvx = decode_batch(model, Z)
    return float(kernels.log_rp(X[0], mu_x, lvx))
