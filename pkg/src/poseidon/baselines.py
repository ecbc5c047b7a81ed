"""Double k-means: k-means on pixels, then k-means on per-cluster row means.

The numbers of clusters are picked with the gap statistic against
uniform reference data drawn in the bounding box of the points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PartitionEstimate
from .numerics import DomainError

_LOG_FLOOR = 1e-300


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    inertia_trace: list[float] = field(default_factory=list)


def _sq_dists(points, centers):
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus(points, k, rng):
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    d2 = _sq_dists(points, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        tot = d2.sum()
        idx = rng.integers(n) if tot <= 0 else rng.choice(n, p=d2 / tot)
        centers.append(points[idx])
        d2 = np.minimum(d2, _sq_dists(points, points[idx][None, :])[:, 0])
    return np.array(centers)


def _fill_empty(points, labels, centers, d2):
    """Give every empty cluster the farthest point of a cluster with >= 2 members."""
    k = centers.shape[0]
    for c in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[c] > 0:
            continue
        own = d2[np.arange(points.shape[0]), labels].copy()
        own[counts[labels] < 2] = -1.0
        far = int(np.argmax(own))
        labels[far] = c
        centers[c] = points[far]
    return labels


def _lloyd(points, centers, max_iter):
    k = centers.shape[0]
    labels = None
    trace = []
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        new = np.argmin(d2, axis=1)
        new = _fill_empty(points, new, centers, d2)
        for c in range(k):
            centers[c] = points[new == c].mean(axis=0)
        trace.append(float(((points - centers[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    return labels, centers, trace


def kmeans(points, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from k-means++ starts; best of n_init by inertia."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, centers, trace = _lloyd(points, _plus_plus(points, k, rng), max_iter)
        inertia = float(((points - centers[labels]) ** 2).sum())
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centers, inertia, trace)
    return best


def gap_select_k(points, k_max: int, n_ref: int = 10, seed: int = 0, n_init: int = 10) -> int:
    """Smallest k with Gap(k) >= Gap(k+1) - s(k+1); k_max when none qualifies."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    k_max = min(k_max, points.shape[0])
    if k_max <= 1:
        return 1
    rng = np.random.default_rng(seed)
    lo, hi = points.min(axis=0), points.max(axis=0)
    refs = [rng.uniform(lo, hi, size=points.shape) for _ in range(n_ref)]
    seeds = rng.integers(0, 2**32, size=k_max)

    def log_w(x, k, s):
        return np.log(max(kmeans(x, k, seed=int(s), n_init=n_init).inertia, _LOG_FLOOR))

    gaps, sds = [], []
    for k in range(1, k_max + 1):
        ref = np.array([log_w(r, k, seeds[k - 1]) for r in refs])
        gaps.append(ref.mean() - log_w(points, k, seeds[k - 1]))
        sds.append(ref.std() * np.sqrt(1.0 + 1.0 / n_ref))
        if k >= 2 and gaps[k - 2] >= gaps[k - 1] - sds[k - 1]:
            return k - 1
    return k_max


def double_kmeans(Y, k_max: int = 10, l_max: int = 10, seed: int = 0, n_ref: int = 10) -> PartitionEstimate:
    """Column clusters by k-means on pixels; row clusters per column cluster
    by k-means on the rows' mean intensity over that cluster's pixels.

    ``Y`` is an N x J array (or AbundanceMatrix). Row labels are keyed (0, k).
    """
    Y = np.asarray(getattr(Y, "values", Y), dtype=float)
    rng = np.random.default_rng(seed)
    s_col, s_rows = rng.integers(0, 2**32, size=2)
    cols_pts = Y.T
    k = gap_select_k(cols_pts, k_max, n_ref=n_ref, seed=int(s_col))
    cols = kmeans(cols_pts, k, seed=int(s_col)).labels
    _, cols = np.unique(cols, return_inverse=True)
    occupied = tuple(int(c) for c in np.unique(cols))
    rows = {}
    for c in occupied:
        means = Y[:, cols == c].mean(axis=1)
        s = int(s_rows) + c
        l = gap_select_k(means, l_max, n_ref=n_ref, seed=s)
        rows[(0, c)] = kmeans(means, l, seed=s).labels
    return PartitionEstimate(cols, rows, occupied)
