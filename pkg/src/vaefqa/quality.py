"""Per-image quality scores and rankings.

The quality of a crop is its natural-log reconstruction probability under a
VAE trained on high-quality faces; higher means better.
"""

from dataclasses import dataclass

import numpy as np

from .checkpoint import model_id as _model_id
from .vae import log_reconstruction_probability


@dataclass(frozen=True)
class QualityScore:
    value: float
    model_id: str
    L: int
    seed: int

    def __float__(self):
        return self.value


def score(model, img, L=10, seed=0, model_id=None):
    value = log_reconstruction_probability(model, img, L=L, seed=seed)
    if not np.isfinite(value):
        raise ValueError("non-finite quality score")
    return QualityScore(value, model_id or _model_id(model), int(L), int(seed))


def order_by_score(values):
    """Indices sorted by descending value, ties by ascending index."""
    values = [float(v) for v in values]
    return sorted(range(len(values)), key=lambda i: (-values[i], i))


def rank(model, images, L=10, seed=0):
    """Score ``images`` and rank them best-first.

    Every image is scored with the same ``seed`` (common random numbers), so
    identical images tie exactly and differences reflect the images alone.

    Returns ``[(index, QualityScore), ...]``.
    """
    images = list(images)
    if not images:
        raise ValueError("rank needs at least one image")
    mid = _model_id(model)
    scores = [score(model, img, L, seed, model_id=mid) for img in images]
    return [(i, scores[i]) for i in order_by_score([s.value for s in scores])]
