"""Synthetic data for the two simulation designs.

Row-class codes are shared across column clusters, so they double as
global atom labels: 0 noise, 1 medium (peaks) or signal (noisy design),
2 high activation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AbundanceMatrix, SpatialGrid, raster_grid

NOISE, MEDIUM, HIGH = 0, 1, 2
SIGNAL = 1

PEAK_MEANS = {NOISE: 0.0, MEDIUM: 0.75, HIGH: 1.5}
NOISY_MEANS = (4.0, 1.0, 0.75, 0.50, 0.25)


@dataclass
class BiclusterTruth:
    column_labels: np.ndarray                 # (J,)
    row_labels_per_cc: dict[int, np.ndarray]  # cc -> (N,) row-class codes
    cell_means: np.ndarray                    # (N, J)

    def atom_labels(self) -> np.ndarray:
        """(N, J) row-class code of every cell."""
        return np.column_stack([self.row_labels_per_cc[int(k)] for k in self.column_labels])

    def check(self, means: dict[int, float]) -> None:
        expected = np.vectorize(means.get)(self.atom_labels()) if self.cell_means.size else self.cell_means
        if not np.allclose(expected, self.cell_means):
            raise AssertionError("cell means inconsistent with labels")

    def to_dict(self) -> dict:
        return {
            "column_labels": self.column_labels.tolist(),
            "row_labels_per_cc": {str(k): v.tolist() for k, v in self.row_labels_per_cc.items()},
        }

    @classmethod
    def from_dict(cls, d: dict, cell_means: np.ndarray) -> "BiclusterTruth":
        return cls(
            np.asarray(d["column_labels"], dtype=int),
            {int(k): np.asarray(v, dtype=int) for k, v in d["row_labels_per_cc"].items()},
            np.asarray(cell_means, dtype=float),
        )


# --------------------------------------------------------------- peaks design

# 5x5 tiles of the 20x20 grid, tile (row, col) -> column cluster.
# Sizes: 1, 1, 1, 4, 4, 5 tiles = 25, 25, 25, 100, 100, 125 pixels, each connected.
_PEAK_TILES = np.array([
    [0, 1, 2, 5],
    [3, 3, 3, 5],
    [4, 4, 3, 5],
    [4, 4, 5, 5],
])


def peaks_column_partition() -> tuple[SpatialGrid, np.ndarray]:
    grid = raster_grid(20, 20)
    x, y = grid.coords[:, 0], grid.coords[:, 1]
    return grid, _PEAK_TILES[y // 5, x // 5]


def _place_peaks(rng, n_rows: int, n_groups: int = 5) -> np.ndarray:
    """Row classes for one column cluster: n_groups pairs of high rows plus flanks."""
    labels = np.full(n_rows, NOISE)
    starts = []
    while len(starts) < n_groups:
        s = int(rng.integers(0, n_rows - 1))
        if all(abs(s - o) >= 2 for o in starts):
            starts.append(s)
    for s in starts:
        labels[s:s + 2] = HIGH
    for s in starts:
        for r in (s - 1, s + 2):
            if 0 <= r < n_rows and labels[r] != HIGH:
                labels[r] = MEDIUM
    return labels


def gen_peaks_scenario(seed: int, n_rows: int = 500, sd: float = 1.0):
    """20x20 pixels, six contiguous column clusters, peak/flank/noise rows.

    The first column cluster carries no peaks (all rows noise).
    Returns (AbundanceMatrix, SpatialGrid, BiclusterTruth).
    """
    rng = np.random.default_rng(seed)
    grid, cols = peaks_column_partition()
    rows = {0: np.full(n_rows, NOISE)}
    for k in range(1, 6):
        rows[k] = _place_peaks(rng, n_rows)
    truth = BiclusterTruth(cols, rows, np.zeros((n_rows, grid.size)))
    means = np.vectorize(PEAK_MEANS.get)(truth.atom_labels()).astype(float)
    truth.cell_means = means
    y = means + sd * rng.standard_normal(means.shape)
    return AbundanceMatrix(y, name=f"peaks_s{seed}"), grid, truth


# --------------------------------------------------------------- noisy design


def noisy_grid() -> SpatialGrid:
    """Placeholder 5x4 lattice for the 20 columns (the design has no spatial term)."""
    return raster_grid(5, 4)


def gen_noisy_collection(seed: int, means=NOISY_MEANS, n_rows: int = 50, n_cols: int = 20):
    """Datasets D0..D4: two column clusters of equal size; in the first, the
    top half of the rows is N(mu_r, 1), everything else N(0, 1).

    Returns a list of (AbundanceMatrix, BiclusterTruth), one per mean.
    """
    rng = np.random.default_rng(seed)
    cols = (np.arange(n_cols) >= n_cols // 2).astype(int)
    signal_rows = (np.arange(n_rows) < n_rows // 2).astype(int) * SIGNAL
    rows = {0: signal_rows, 1: np.full(n_rows, NOISE)}
    out = []
    for r, mu in enumerate(means):
        truth = BiclusterTruth(cols.copy(), {k: v.copy() for k, v in rows.items()}, np.zeros((n_rows, n_cols)))
        truth.cell_means = np.where(truth.atom_labels() == SIGNAL, float(mu), 0.0)
        y = truth.cell_means + rng.standard_normal((n_rows, n_cols))
        out.append((AbundanceMatrix(y, name=f"D{r}"), truth))
    return out
