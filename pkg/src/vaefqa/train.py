"""Adam training loop for :class:`~vaefqa.vae.VaeModel`."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .vae import batch_objective, example_noise

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch_index, loss):
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index}"
        )
        self.epoch, self.batch_index, self.loss = epoch, batch_index, loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 144
    epochs: int = 10
    mc_samples: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)


class Adam:
    """Adam with bias-corrected moments over a dict of arrays."""

    def __init__(self, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        """Return updated copies of ``params``; the inputs are not modified."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        out = {}
        for name, value in params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            m = b1 * self.m.get(name, 0.0) + (1.0 - b1) * g
            v = b2 * self.v.get(name, 0.0) + (1.0 - b2) * g * g
            self.m[name], self.v[name] = m, v
            step = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            out[name] = np.asarray(value, dtype=np.float64) - step
        return out


def _as_matrix(dataset, arch):
    X = np.asarray(dataset, dtype=np.float64).reshape(-1, arch.input_dim)
    if X.shape[0] == 0:
        raise ValueError("dataset is empty")
    return X


def train(model, dataset, cfg=TrainConfig(), progress=None):
    """Train ``model`` with Adam over shuffled mini-batches.

    ``dataset`` is an array-like of images (``N x side x side`` or
    ``N x side*side``).  Returns ``(new_model, TrainLog)``; the input model is
    left untouched.  Parameters are rounded to float32 after every update
    so the in-memory model always equals its checkpoint.
    """
    arch = model.arch
    X = _as_matrix(dataset, arch)
    out = model.copy()
    tlog = TrainLog()
    if cfg.epochs == 0:
        return out, tlog
    opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_seeds = rng.integers(0, 2**63 - 1, size=(n + cfg.batch_size - 1) // cfg.batch_size)
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            xb = X[order[start:start + cfg.batch_size]]
            eps = example_noise(batch_seeds[bi], xb, arch.latent_dim)
            res = batch_objective(arch, out.params64(), out.buffers64(), xb, eps, train=True)
            if not np.isfinite(res.loss) or not all(
                np.all(np.isfinite(g)) for g in res.grads.values()
            ):
                raise TrainingDiverged(epoch, bi, res.loss)
            new_params = opt.step(out.params64(), res.grads)
            out.params = {k: v.astype(np.float32) for k, v in new_params.items()}
            for k, v in res.buffers.items():
                out.buffers[k] = v.astype(np.float32)
            total += res.loss * xb.shape[0]
            count += xb.shape[0]
        tlog.epoch_loss.append(total / count)
        log.info("epoch %d/%d mean loss %.4f", epoch + 1, cfg.epochs, tlog.epoch_loss[-1])
        if progress is not None:
            progress(epoch, tlog.epoch_loss[-1])
    return out, tlog
