"""Multilevel approximate similarity search with k-means centroids."""

from .core import (
    L1,
    L2,
    LINF,
    Dataset,
    DimensionMismatch,
    Metric,
    SparseVector,
    distance,
    sparse_dense_distance,
)
from .index import (
    BuildParams,
    CentroidLayer,
    MultilevelIndex,
    QueryResult,
    QueryStats,
    RelocationReport,
    build,
    layer_plan,
    predicted_depth,
    relocate_and_rebuild,
)
from .kmeans import KMeansResult, assign, kmeans_fit

__version__ = "0.1.0"
