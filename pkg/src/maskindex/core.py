"""Metric-space primitives: vectors, distances, datasets and seeding.

Dense vectors are plain 1-D float64 numpy arrays. Sparse vectors are
:class:`SparseVector` instances; a collection of sparse points is held as a
``scipy.sparse.csr_matrix``. Centroids are always dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence, Union

import numpy as np
import scipy.sparse as sp


class DimensionMismatch(ValueError):
    """Two operands do not share a dimensionality."""


@dataclass(frozen=True)
class SparseVector:
    """A sparse vector given by strictly increasing indices and their values."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != val.shape:
            raise ValueError("indices and values must be 1-D and of equal length")
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise ValueError("sparse indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError("sparse index out of range")
        if not np.all(np.isfinite(val)):
            raise ValueError("vector components must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, float]], dim: int) -> SparseVector:
        pairs = sorted(pairs)
        return cls(np.array([p[0] for p in pairs], dtype=np.int64),
                   np.array([p[1] for p in pairs], dtype=np.float64), dim)

    def densify(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


Vector = Union[np.ndarray, SparseVector]


def as_dense(v: Vector) -> np.ndarray:
    if isinstance(v, SparseVector):
        return v.densify()
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


def vector_dim(v: Vector) -> int:
    return v.dim if isinstance(v, SparseVector) else int(np.shape(v)[0])


def check_vector(v: Vector) -> Vector:
    """Validate finiteness of a dense vector (sparse vectors validate themselves)."""
    if isinstance(v, SparseVector):
        return v
    arr = as_dense(v)
    if arr.size == 0:
        raise ValueError("vector must have positive dimension")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector components must be finite")
    return arr


def _reduce(kind: str, diff: np.ndarray) -> np.ndarray:
    if kind == "l2":
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if kind == "l1":
        return np.sum(np.abs(diff), axis=-1)
    if kind == "linf":
        return np.max(np.abs(diff), axis=-1)
    raise AssertionError(kind)


class Metric:
    """A Minkowski-family distance (``l1``, ``l2``, ``linf``) or a user callable.

    A user callable receives two dense 1-D arrays and returns a float. It is
    the caller's responsibility that it satisfies the metric axioms.
    """

    BUILTIN = ("l1", "l2", "linf")

    def __init__(self, kind: Union[str, Callable[[np.ndarray, np.ndarray], float]] = "l2"):
        if callable(kind):
            self.kind = "custom"
            self._fn = kind
            self.name = getattr(kind, "__name__", "custom")
        else:
            k = str(kind).lower()
            if k not in self.BUILTIN:
                raise ValueError(f"unknown metric {kind!r}; expected one of {self.BUILTIN}")
            self.kind = k
            self._fn = None
            self.name = k

    def __repr__(self):
        return f"Metric({self.name!r})"

    def __eq__(self, other):
        return isinstance(other, Metric) and self.kind == other.kind and self._fn is other._fn

    def __hash__(self):
        return hash((self.kind, id(self._fn)))

    def pair(self, a: np.ndarray, b: np.ndarray) -> float:
        """Distance between two dense vectors of equal length."""
        if a.shape != b.shape:
            raise DimensionMismatch(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
        if self._fn is not None:
            return float(self._fn(a, b))
        return float(_reduce(self.kind, a - b))

    def to_many(self, q: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Distances from one dense vector to each row of a dense matrix."""
        if X.ndim != 2 or X.shape[1] != q.shape[0]:
            raise DimensionMismatch(f"dimension mismatch: {q.shape[0]} vs {X.shape[-1]}")
        if self._fn is not None:
            return np.array([self._fn(q, x) for x in X], dtype=np.float64)
        return _reduce(self.kind, X - q)

    def rowwise(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Distances between matching rows of two dense matrices."""
        if A.shape != B.shape:
            raise DimensionMismatch(f"shape mismatch: {A.shape} vs {B.shape}")
        if self._fn is not None:
            return np.array([self._fn(a, b) for a, b in zip(A, B)], dtype=np.float64)
        return _reduce(self.kind, A - B)

    def batched(self, Q: np.ndarray, C: np.ndarray) -> np.ndarray:
        """Distances ``Q[i]`` to ``C[i, j]`` for ``Q`` (m, d) and ``C`` (m, c, d)."""
        if self._fn is not None:
            return np.array([[self._fn(q, c) for c in row] for q, row in zip(Q, C)],
                            dtype=np.float64).reshape(C.shape[:2])
        return _reduce(self.kind, C - Q[:, None, :])


L1, L2, LINF = Metric("l1"), Metric("l2"), Metric("linf")


def as_metric(m: Union[str, Metric, Callable, None]) -> Metric:
    if m is None:
        return L2
    return m if isinstance(m, Metric) else Metric(m)


def distance(metric: Union[str, Metric], a: Vector, b: Vector) -> float:
    """Distance between two vectors; sparse operands are densified exactly."""
    metric = as_metric(metric)
    if vector_dim(a) != vector_dim(b):
        raise DimensionMismatch(f"dimension mismatch: {vector_dim(a)} vs {vector_dim(b)}")
    return metric.pair(as_dense(a), as_dense(b))


def sparse_dense_distance(metric: Union[str, Metric], sparse: SparseVector,
                          dense: np.ndarray) -> float:
    if not isinstance(sparse, SparseVector):
        raise TypeError("first operand must be a SparseVector")
    dense = as_dense(dense)
    if sparse.dim != dense.shape[0]:
        raise DimensionMismatch(f"dimension mismatch: {sparse.dim} vs {dense.shape[0]}")
    # densify so the arithmetic matches the dense path bit for bit
    return as_metric(metric).pair(sparse.densify(), dense)


Points = Union[np.ndarray, sp.csr_matrix]


def rows(points: Points, idx) -> np.ndarray:
    """Dense copy of the selected rows of a dense or CSR point matrix."""
    if sp.issparse(points):
        return points[idx].toarray()
    return points[idx]


def n_rows(points: Points) -> int:
    return int(points.shape[0])


def row_vector(points: Points, i: int) -> Vector:
    if sp.issparse(points):
        r = points.getrow(i)
        order = np.argsort(r.indices)
        return SparseVector(r.indices[order], r.data[order], points.shape[1])
    return points[i]


def stack_vector(points: Points, v: Vector) -> Points:
    """Return a new point matrix with ``v`` appended as the last row."""
    if sp.issparse(points):
        if isinstance(v, SparseVector):
            new = sp.csr_matrix((v.values, v.indices, [0, v.nnz]), shape=(1, v.dim))
        else:
            new = sp.csr_matrix(as_dense(v)[None, :])
        return sp.vstack([points, new], format="csr")
    return np.vstack([points, as_dense(v)[None, :]])


@dataclass
class Dataset:
    """Points with unique stable ids and optional category labels."""

    points: Points
    ids: np.ndarray = None
    labels: list[Hashable] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if sp.issparse(self.points):
            self.points = sp.csr_matrix(self.points, dtype=np.float64)
            self.points.sort_indices()
            data = self.points.data
        else:
            self.points = np.asarray(self.points, dtype=np.float64)
            if self.points.ndim != 2:
                raise ValueError("dense points must be a 2-D array")
            data = self.points
        if self.points.shape[1] < 1:
            raise ValueError("points must have positive dimension")
        if not np.all(np.isfinite(data)):
            raise ValueError("point components must be finite")
        n = self.points.shape[0]
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.shape != (n,):
            raise ValueError(f"got {self.ids.shape[0]} ids for {n} points")
        if np.unique(self.ids).size != n:
            raise ValueError("element ids must be unique")
        if self.labels is not None:
            self.labels = list(self.labels)
            if len(self.labels) != n:
                raise ValueError(f"got {len(self.labels)} labels for {n} points")

    def __len__(self):
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def sparse(self) -> bool:
        return sp.issparse(self.points)

    def point(self, i: int) -> Vector:
        return row_vector(self.points, i)

    def dense_rows(self, idx) -> np.ndarray:
        return rows(self.points, idx)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return Dataset(self.points[idx], self.ids[idx], labels, dict(self.meta))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed`` and an optional stream path; same inputs, same draws."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))
