"""Scoring fits against simulated truth, and the two simulation studies."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .baselines import double_kmeans
from .cavi import run_cavi
from .metrics import ari, bicluster_ari, bicluster_cells, bicluster_rmse, rc_ari
from .model import DatasetCollection, FixedBeta, Hyperparameters, NIGPrior, PartitionEstimate
from .simgen import (
    NOISY_MEANS,
    BiclusterTruth,
    gen_noisy_collection,
    gen_peaks_scenario,
    noisy_grid,
)

logger = logging.getLogger(__name__)

NOISY_HYPER = Hyperparameters(K=15, L=30, beta=FixedBeta(0.0))
PEAKS_HYPER = Hyperparameters(K=10, L=10, nig=(NIGPrior(0.0, 0.1, 3.0, 2.0),), b0=1e-4,
                              beta=FixedBeta(1.0))


def score(truth: BiclusterTruth, data: np.ndarray, part: PartitionEstimate, t: int = 0) -> dict[str, float]:
    """cc_ari, rc_ari, bicluster_ari and rmse of dataset t of a fit."""
    rows = part.rows_for(t)
    est_cells = bicluster_cells(part.column_labels, rows)
    return {
        "cc_ari": ari(truth.column_labels, part.column_labels),
        "rc_ari": rc_ari(truth.column_labels, truth.row_labels_per_cc, part.column_labels, rows),
        "bicluster_ari": bicluster_ari(truth.column_labels, truth.row_labels_per_cc,
                                       part.column_labels, rows),
        "rmse": bicluster_rmse(data, est_cells, truth.cell_means),
    }


def stack_truths(truths: list[BiclusterTruth]) -> BiclusterTruth:
    """Truth of row-stacked datasets; row classes of different datasets stay distinct."""
    base = truths[0].column_labels
    if any(not np.array_equal(t.column_labels, base) for t in truths):
        raise ValueError("stacked datasets must share the column partition")
    shift = 1 + max(int(v.max()) for t in truths for v in t.row_labels_per_cc.values())
    rows = {k: np.concatenate([t.row_labels_per_cc[k] + s * shift for s, t in enumerate(truths)])
            for k in truths[0].row_labels_per_cc}
    return BiclusterTruth(base.copy(), rows, np.vstack([t.cell_means for t in truths]))


# ------------------------------------------------------------------ noisy study


@dataclass
class NoisyReplica:
    """Scores of one replica of the noisy design.

    ``pose[r]`` scores the single-dataset fit of D_r; ``poseidon[r]`` scores
    dataset D_r inside the joint fit of {D_0, D_r}.
    """
    seed: int
    pose: dict[int, dict[str, float]]
    poseidon: dict[int, dict[str, float]]


def noisy_replica(seed: int, n_starts: int = 50, levels=(1, 2, 3, 4), means=NOISY_MEANS,
                  h: Hyperparameters = NOISY_HYPER, n_jobs: int = 1, **fit_kw) -> NoisyReplica:
    """Fit and score every noise level of one replica; ``fit_kw`` goes to ``run_cavi``."""
    data = gen_noisy_collection(seed, means)
    grid = noisy_grid()
    pose, joint = {}, {}
    for r in levels:
        y, truth = data[r]
        fit = run_cavi(DatasetCollection([y], grid), h, n_starts=n_starts, seed=seed, n_jobs=n_jobs,
                       **fit_kw)
        pose[r] = score(truth, y.values, fit.partitions, 0)
        fit = run_cavi(DatasetCollection([data[0][0], y], grid), h, n_starts=n_starts, seed=seed,
                       n_jobs=n_jobs, **fit_kw)
        joint[r] = score(truth, y.values, fit.partitions, 1)
    logger.info("noisy replica %d done", seed)
    return NoisyReplica(seed, pose, joint)


def summarize(replicas, attr: str, metric: str) -> dict[int, float]:
    levels = getattr(replicas[0], attr).keys()
    return {r: float(np.mean([getattr(rep, attr)[r][metric] for rep in replicas])) for r in levels}


# ------------------------------------------------------------------ peaks study


@dataclass
class PeaksReplica:
    seed: int
    pose: dict[str, float]
    double_kmeans: dict[str, float]


def peaks_replica(seed: int, n_starts: int = 10, h: Hyperparameters = PEAKS_HYPER,
                  n_jobs: int = 1, **fit_kw) -> PeaksReplica:
    y, grid, truth = gen_peaks_scenario(seed)
    fit = run_cavi(DatasetCollection([y], grid), h, n_starts=n_starts, seed=seed, n_jobs=n_jobs, **fit_kw)
    dk = double_kmeans(y, k_max=h.K, l_max=h.L, seed=seed)
    logger.info("peaks replica %d done", seed)
    return PeaksReplica(seed, score(truth, y.values, fit.partitions), score(truth, y.values, dk))

