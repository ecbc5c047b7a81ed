"""Partition agreement and bicluster recovery scores."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from .numerics import DomainError


def _pairs(x):
    return x * (x - 1) / 2.0


def _codes(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:   # rows of a label matrix are tuples
        return np.unique(labels, axis=0, return_inverse=True)[1].ravel()
    return np.unique(labels, return_inverse=True)[1].ravel()


def ari(a, b) -> float:
    """Adjusted Rand index of two labelings of the same items.

    When the chance adjustment is degenerate (for instance both labelings
    are trivial) the result is 1 for identical partitions and 0 otherwise.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("ari needs two 1-d labelings of equal length")
    if a.size == 0:
        raise DomainError("ari of empty labelings")
    ca, cb = _codes(a), _codes(b)
    table = np.zeros((ca.max() + 1, cb.max() + 1))
    np.add.at(table, (ca, cb), 1.0)
    index = _pairs(table).sum()
    sa, sb = _pairs(table.sum(axis=1)).sum(), _pairs(table.sum(axis=0)).sum()
    expected = sa * sb / _pairs(float(a.size)) if a.size > 1 else 0.0
    denom = 0.5 * (sa + sb) - expected
    if denom == 0:
        same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
        return 1.0 if same else 0.0
    return float((index - expected) / denom)


def bicluster_cells(column_labels, row_labels: Mapping[int, np.ndarray]) -> np.ndarray:
    """(N, J, 2) array holding, per cell, its CC and its RC within that CC."""
    cols = np.asarray(column_labels, dtype=int)
    rows = np.column_stack([np.asarray(row_labels[int(k)], dtype=int) for k in cols])
    return np.stack([np.broadcast_to(cols, rows.shape), rows], axis=-1)


def bicluster_ari(truth_cols, truth_rows: Mapping[int, np.ndarray],
                  est_cols, est_rows: Mapping[int, np.ndarray]) -> float:
    """ARI of the vectorized (CC, RC) cell labels."""
    t = bicluster_cells(truth_cols, truth_rows)
    e = bicluster_cells(est_cols, est_rows)
    if t.shape != e.shape:
        raise DomainError(f"shape mismatch: {t.shape[:2]} vs {e.shape[:2]}")
    return ari(_codes(t.reshape(-1, 2)), _codes(e.reshape(-1, 2)))


def rc_ari(truth_cols, truth_rows: Mapping[int, np.ndarray],
           est_cols, est_rows: Mapping[int, np.ndarray]) -> float:
    """Row-cluster ARI of one dataset, scored cell by cell.

    Each cell carries the label (CC of its pixel, RC of its row within that
    CC), so row partitions of different column clusters are pooled over the
    whole matrix. Atom identities are ignored: two CCs whose rows use the
    same atom still count as different row classes. For a single dataset
    this equals ``bicluster_ari``; it is kept as its own name because joint
    fits report it per dataset.
    """
    return bicluster_ari(truth_cols, truth_rows, est_cols, est_rows)


def bicluster_rmse(data: np.ndarray, est_cells: np.ndarray, truth_means: np.ndarray) -> float:
    """RMSE of bicluster-mean fitted values against the true cell means.

    ``est_cells`` gives each cell's bicluster, either as an (N, J) label
    matrix or as the (N, J, 2) output of ``bicluster_cells``.
    """
    data = np.asarray(data, dtype=float)
    truth_means = np.asarray(truth_means, dtype=float)
    est_cells = np.asarray(est_cells)
    if est_cells.ndim == 3:
        codes = _codes(est_cells.reshape(-1, est_cells.shape[-1]))
    else:
        codes = _codes(est_cells.ravel())
    if data.shape != truth_means.shape or codes.size != data.size:
        raise DomainError("data, estimate and truth must share one shape")
    sums = np.bincount(codes, weights=data.ravel())
    counts = np.bincount(codes)
    fitted = (sums / counts)[codes]
    return float(np.sqrt(np.mean((fitted - truth_means.ravel()) ** 2)))
