"""Nested biclustering of spatial omics matrices with a Potts prior on pixel clusters."""

from .cavi import FitResult, VariationalState, elbo, extract_partitions, run_cavi
from .model import (
    AbundanceMatrix,
    DatasetCollection,
    FixedBeta,
    GridBeta,
    Hyperparameters,
    NIGPrior,
    PartitionEstimate,
    SpatialGrid,
    build_grid,
    transform_abundance,
    validate_collection,
)

__version__ = "0.1.0"
