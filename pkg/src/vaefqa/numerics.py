"""Log-domain probability primitives shared by the VAE and the scorer."""

from dataclasses import dataclass

import numpy as np

from . import kernels

SIGMA_FLOOR = 1e-4
SIGMA_CEIL = 1e3
LOGVAR_MIN = 2.0 * float(np.log(SIGMA_FLOOR))
LOGVAR_MAX = 2.0 * float(np.log(SIGMA_CEIL))
HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianDiag:
    """Diagonal Gaussian given by mean and standard deviation vectors."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.shape != sigma.shape:
            raise ValueError(f"mu shape {mu.shape} != sigma shape {sigma.shape}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_logvar(cls, mu, logvar):
        lv = np.clip(np.asarray(logvar, dtype=np.float64), LOGVAR_MIN, LOGVAR_MAX)
        return cls(mu, np.exp(0.5 * lv))

    def __len__(self):
        return self.mu.shape[-1]


def _as_vector(v, name):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        a = a.reshape(-1)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def gaussian_log_density(x, mu, sigma):
    """Log of N(x | mu, diag(sigma^2)), summed over dimensions.

    Entries of ``sigma`` below ``SIGMA_FLOOR`` are clamped to the floor.
    """
    x = _as_vector(x, "x")
    mu = _as_vector(mu, "mu")
    sigma = _as_vector(sigma, "sigma")
    if not (x.shape == mu.shape == sigma.shape):
        raise ValueError(f"dimension mismatch: x{x.shape} mu{mu.shape} sigma{sigma.shape}")
    s = np.maximum(sigma, SIGMA_FLOOR)
    r = (x - mu) / s
    return float(np.sum(-HALF_LOG_2PI - np.log(s) - 0.5 * r * r))


def kl_to_standard_normal(q):
    """KL(q || N(0, I)) for a diagonal Gaussian ``q``."""
    sigma = np.asarray(q.sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    mu = np.asarray(q.mu, dtype=np.float64)
    var = sigma * sigma
    return float(0.5 * np.sum(mu * mu + var - 1.0 - np.log(var)))


def log_mean_exp(values):
    """Stable ``log(mean(exp(values)))``."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("log_mean_exp of an empty sequence")
    if not np.all(np.isfinite(v)):
        raise ValueError("log_mean_exp requires finite values")
    return float(kernels.log_mean_exp(v))
