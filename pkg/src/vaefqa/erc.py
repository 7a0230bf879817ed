"""Error-versus-reject evaluation of a quality predictor.

Given genuine pairs with a comparison distance ``d_i`` and the probe's
predicted quality ``q_i``, a threshold ``d_t`` is fixed so that an initial
fraction ``f`` of pairs fails to match; probes whose quality falls strictly
below the ``r``-quantile of all qualities are then discarded and the false
non-match rate of the remaining pairs is reported as a function of ``r``.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .tabular import TableError, read_table

FNMR_CAP = 0.05
# Guard against p*N landing a hair above an integer through binary round-off.
_QUANTILE_SLACK = 1e-9


class ErcError(ValueError):
    pass


class FnmrCapWarning(UserWarning):
    pass


@dataclass
class GenuinePairTable:
    pair_id: list
    subject_id: list
    distance: np.ndarray
    quality: np.ndarray

    def __post_init__(self):
        self.distance = np.asarray(self.distance, dtype=np.float64)
        self.quality = np.asarray(self.quality, dtype=np.float64)
        n = len(self.distance)
        if n < 1:
            raise ErcError("pair table is empty")
        if not (len(self.pair_id) == len(self.subject_id) == len(self.quality) == n):
            raise ErcError("pair table columns have different lengths")
        if not np.all(np.isfinite(self.distance)) or np.any(self.distance < 0):
            raise ErcError("distances must be finite and non-negative")
        if not np.all(np.isfinite(self.quality)):
            raise ErcError("qualities must be finite")

    @classmethod
    def from_arrays(cls, distance, quality, subject_id=None):
        n = len(distance)
        return cls(
            [str(i) for i in range(n)],
            list(subject_id) if subject_id is not None else [""] * n,
            distance,
            quality,
        )

    def with_quality(self, quality):
        return GenuinePairTable(list(self.pair_id), list(self.subject_id), self.distance, quality)

    def __len__(self):
        return len(self.distance)


def load_pairs(path):
    try:
        rows = read_table(path, required=("pair_id", "subject_id", "distance", "quality"))
    except TableError as exc:
        raise ErcError(str(exc)) from exc
    ids, subs, dist, qual = [], [], [], []
    for lineno, row in rows:
        try:
            d, q = float(row["distance"]), float(row["quality"])
        except ValueError:
            raise ErcError(f"line {lineno}: distance/quality must be numbers") from None
        if not (math.isfinite(d) and math.isfinite(q)) or d < 0:
            raise ErcError(f"line {lineno}: distance must be finite and >= 0, quality finite")
        ids.append(row["pair_id"])
        subs.append(row["subject_id"])
        dist.append(d)
        qual.append(q)
    return GenuinePairTable(ids, subs, dist, qual)


@dataclass
class ErcCurve:
    r: np.ndarray
    fnmr: np.ndarray
    f: float
    d_t: float
    n: int

    @property
    def points(self):
        return list(zip(self.r.tolist(), self.fnmr.tolist()))


def _quantile_rank(n, p):
    """1-based rank of the lower empirical p-quantile among ``n`` sorted values."""
    return min(n, max(1, math.ceil(p * n - _QUANTILE_SLACK)))


def empirical_quantile(samples, p):
    """Smallest sample ``v`` with ``#{s <= v} / N >= p``."""
    s = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    if s.size == 0:
        raise ErcError("empirical_quantile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise ErcError(f"p must lie in [0, 1], got {p}")
    return float(s[_quantile_rank(s.size, p) - 1])


def match_threshold(table, f):
    if not 0.0 < f < 1.0:
        raise ErcError(f"initial FNMR f must lie in (0, 1), got {f}")
    return empirical_quantile(table.distance, 1.0 - f)


def reject_mask(quality, r):
    """Boolean mask of rejected pairs: quality strictly below the r-quantile."""
    if not 0.0 <= r < 1.0:
        raise ErcError(f"reject fraction must lie in [0, 1), got {r}")
    if r == 0.0:
        return np.zeros(len(quality), dtype=bool)
    return quality < empirical_quantile(quality, r)


def fnmr(table, d_t, r):
    keep = ~reject_mask(table.quality, r)
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise ErcError(f"reject fraction {r} too high for N={len(table)}: every pair rejected")
    return float(np.count_nonzero(table.distance[keep] >= d_t)) / n_keep


def default_r_grid():
    return np.round(np.arange(0, 96) * 0.01, 10)


def erc_curve(table, f, r_grid=None):
    grid = default_r_grid() if r_grid is None else np.asarray(r_grid, dtype=np.float64)
    if grid.size == 0:
        raise ErcError("empty reject grid")
    if np.any(grid < 0) or np.any(grid >= 1) or np.any(np.diff(grid) <= 0):
        raise ErcError("reject grid must be strictly ascending within [0, 1)")
    d_t = match_threshold(table, f)
    values = np.array([fnmr(table, d_t, r) for r in grid])
    if values[0] > FNMR_CAP and grid[0] == 0.0:
        warnings.warn(
            f"initial FNMR {values[0]:.4f} exceeds the {FNMR_CAP} operating cap", FnmrCapWarning,
            stacklevel=2,
        )
    return ErcCurve(grid, values, float(f), d_t, len(table))


def perfect_curve(table, f, r_grid=None):
    """Reference curve of a predictor that orders pairs exactly by distance."""
    return erc_curve(table.with_quality(-table.distance), f, r_grid)


def area_under_erc(curve):
    r, y = np.asarray(curve.r, dtype=np.float64), np.asarray(curve.fnmr, dtype=np.float64)
    if r.size < 2:
        raise ErcError("need at least two points")
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(r)))
