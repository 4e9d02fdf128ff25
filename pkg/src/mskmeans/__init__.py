"""Multistage binary k-means parcellation of 4-D time-series volumes."""
from .clustering import (
    HierarchyTree,
    KMeansConfig,
    MultistageConfig,
    Parcellation,
    hierarchical_cluster,
    kmeans,
    multistage_cluster,
    simple_kmeans,
)
from .core import TimeSeriesMatrix, correlation_distance, make_rng, pearson_correlation
from .errors import EmptyInput, EmptyMask, FormatError, InvalidInput, MskError, ResourceLimit
from .metrics import compare_parcellations, intra_cluster_correlation
from .volio import LabelVolume, MaskVolume, Volume4D, VolumeGeometry

__version__ = "0.1.0"

__all__ = [
    "EmptyInput", "EmptyMask", "FormatError", "HierarchyTree", "InvalidInput", "KMeansConfig",
    "LabelVolume", "MaskVolume", "MskError", "MultistageConfig", "Parcellation", "ResourceLimit",
    "TimeSeriesMatrix", "Volume4D", "VolumeGeometry", "compare_parcellations",
    "correlation_distance", "hierarchical_cluster", "intra_cluster_correlation", "kmeans",
    "make_rng", "multistage_cluster", "pearson_correlation", "simple_kmeans",
]
