"""Initial designs of experiments: Latin hypercube sampling with maximin improvement.

Designs live on the unit cube ``[0, 1]^n``.  Callers that need points in native
problem coordinates apply their own affine map afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from ._util import stable_seed
from .errors import ConfigError


@dataclass(frozen=True)
class DoEConfig:
    """Configuration for the initial design.

    ``n_points`` defaults to ``2 * dim + 4`` when left unset.
    """

    dim: int
    n_points: int | None = None
    improvement_iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.resolved_n_points < 2:
            raise ConfigError(f"n_points must be >= 2, got {self.resolved_n_points}")
        if self.improvement_iterations < 0:
            raise ConfigError("improvement_iterations must be >= 0")

    @property
    def resolved_n_points(self) -> int:
        return 2 * self.dim + 4 if self.n_points is None else self.n_points


def lhs(config: DoEConfig) -> np.ndarray:
    """Latin hypercube sample on [0, 1]^dim.

    Every dimension gets exactly one point per bin ``[j/m, (j+1)/m)``, with a
    uniform random position inside the bin.  Deterministic for a given seed.
    """
    m = config.resolved_n_points
    rng = np.random.default_rng(config.seed)
    points = np.empty((m, config.dim))
    for j in range(config.dim):
        perm = rng.permutation(m)
        u = rng.random(m)
        points[:, j] = (perm + u) / m
    return points


def min_pairwise_distance(points: np.ndarray) -> float:
    """Smallest Euclidean distance between any two rows."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return np.inf
    return float(pdist(points).min())


def maximin_improve(points: np.ndarray, iterations: int, seed: int = 0) -> np.ndarray:
    """Improve the maximin criterion of an LHS by within-bin resampling.

    Each iteration resamples one coordinate of one point uniformly inside its
    current bin and keeps the move only if the minimum pairwise distance
    strictly increases.  Bin occupancy (LHS validity) is preserved by
    construction, and the maximin score is non-decreasing.
    """
    pts = np.array(points, dtype=float)
    m = len(pts)
    if m < 2 or iterations == 0:
        return pts
    rng = np.random.default_rng(seed)
    best = min_pairwise_distance(pts)
    for _ in range(iterations):
        i = int(rng.integers(m))
        j = int(rng.integers(pts.shape[1]))
        bin_idx = min(int(pts[i, j] * m), m - 1)
        old = pts[i, j]
        pts[i, j] = (bin_idx + rng.random()) / m
        cand = min_pairwise_distance(pts)
        if cand > best:
            best = cand
        else:
            pts[i, j] = old
    return pts


def doe(config: DoEConfig) -> np.ndarray:
    """LHS followed by maximin improvement; the standard initial design."""
    points = lhs(config)
    improve_seed = stable_seed(config.seed, "maximin")
    return maximin_improve(points, config.improvement_iterations, seed=improve_seed)
