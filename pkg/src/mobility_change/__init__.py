"""Mobility change analysis.

Daily dwell-time panels are smoothed with a centered rolling mean, differenced
against a reference year, decomposed with a truncated SVD, clustered, and
tested for spatial autocorrelation and covariate association.
"""

from .cluster import (
    AgglomerativeClustering,
    KMeans,
    cut_dendrogram,
    hierarchical,
    kmeans,
)
from .correlate import correlate_all, pearson
from .decompose import (
    DeltaSVD,
    assemble_matrix,
    normalize_loadings,
    remove_outliers,
    truncated_svd,
)
from .exceptions import (
    ConstantFieldError,
    DataError,
    GapError,
    MobilityError,
    NumericError,
    SchemaError,
)
from .ingest import aggregate_to_region, parse_panel, prepare_series, repair_gaps
from .mobility import TsppTransformer, aggregate_delta, delta_tspp, rolling_mean, tspp
from .spatial import global_moran, local_moran, queen_weights, standardize
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "AgglomerativeClustering",
    "ConstantFieldError",
    "DataError",
    "DeltaSVD",
    "GapError",
    "KMeans",
    "MobilityError",
    "NumericError",
    "SchemaError",
    "SynthConfig",
    "TsppTransformer",
    "aggregate_delta",
    "aggregate_to_region",
    "assemble_matrix",
    "correlate_all",
    "cut_dendrogram",
    "delta_tspp",
    "generate",
    "global_moran",
    "hierarchical",
    "kmeans",
    "local_moran",
    "normalize_loadings",
    "parse_panel",
    "pearson",
    "prepare_series",
    "queen_weights",
    "remove_outliers",
    "repair_gaps",
    "rolling_mean",
    "standardize",
    "truncated_svd",
    "tspp",
]
