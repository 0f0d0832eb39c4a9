"""Contiguity weights and spatial autocorrelation."""

from .geojson import feature_collection, join_properties, read_geometries, write_geojson
from .moran import (
    LisaResult,
    MoranResult,
    global_moran,
    local_moran,
    moran_statistic,
    write_lisa_csv,
)
from .weights import (
    RegionGeometry,
    SpatialWeights,
    drop_islands,
    queen_weights,
    read_gal,
    rook_weights,
    standardize,
    write_gal,
)

__all__ = [
    "LisaResult",
    "MoranResult",
    "RegionGeometry",
    "SpatialWeights",
    "drop_islands",
    "feature_collection",
    "global_moran",
    "join_properties",
    "local_moran",
    "moran_statistic",
    "queen_weights",
    "read_gal",
    "read_geometries",
    "rook_weights",
    "standardize",
    "write_gal",
    "write_geojson",
    "write_lisa_csv",
]
