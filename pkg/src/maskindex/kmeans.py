"""Seeded Lloyd's k-means with k-means++ seeding and empty-cluster repair.

The work horse is :func:`fit_batch`, which runs independent fits on a stack of
equally sized groups ``(G, m, d)`` in lock step. Index construction fits
thousands of tiny groups per layer, so vectorizing across groups matters far
more than vectorizing inside one fit. :func:`kmeans_fit` is the single-group
entry point and goes through the same code.

The objective is always squared Euclidean distance, whatever metric the index
later queries with.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .core import DimensionMismatch, as_dense, make_rng

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4

# elements of the (G, m, k, d) difference tensor materialized at once
_CHUNK_ELEMS = 1 << 22


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    iterations: int
    converged: bool

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])


TraceFn = Callable[[int, float, float], None]


def _as_matrix(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        X = np.asarray(points, dtype=np.float64)
    elif sp.issparse(points):
        X = points.toarray().astype(np.float64)
    else:
        vecs = [as_dense(p) for p in points]
        if not vecs:
            raise ValueError("points must be non-empty")
        dims = {v.shape[0] for v in vecs}
        if len(dims) != 1:
            raise DimensionMismatch(f"points have mixed dimensions {sorted(dims)}")
        X = np.stack(vecs)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("points must be a non-empty 2-D collection")
    return X


def _sqdist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared distances (G, m, k) between X (G, m, d) and C (G, k, d)."""
    G, m, d = X.shape
    k = C.shape[1]
    per_group = max(1, m * k * d)
    step = max(1, _CHUNK_ELEMS // per_group)
    if step >= G:
        diff = X[:, :, None, :] - C[:, None, :, :]
        return np.einsum("gmkd,gmkd->gmk", diff, diff)
    out = np.empty((G, m, k))
    for s in range(0, G, step):
        diff = X[s:s + step, :, None, :] - C[s:s + step, None, :, :]
        out[s:s + step] = np.einsum("gmkd,gmkd->gmk", diff, diff)
    return out


def _plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    G, m, _ = X.shape
    ar = np.arange(G)
    C = np.empty((G, k, X.shape[2]))
    first = rng.integers(m, size=G)
    C[:, 0] = X[ar, first]
    D = _sqdist(X, C[:, :1])[:, :, 0]
    for j in range(1, k):
        total = D.sum(axis=1)
        u = rng.random(G) * total
        idx = (np.cumsum(D, axis=1) <= u[:, None]).sum(axis=1)
        # all mass on chosen points: nothing left to spread to, reuse a point
        idx = np.where(total > 0, np.minimum(idx, m - 1), first)
        C[:, j] = X[ar, idx]
        D = np.minimum(D, _sqdist(X, C[:, j:j + 1])[:, :, 0])
    return C


def _repair_empty(D2: np.ndarray, labels: np.ndarray, k: int) -> None:
    """Re-seed each empty cluster with the point farthest from its centroid.

    Mutates ``labels`` (G, m) in place. A donor cluster always keeps at least
    one member, so repair never empties another cluster.
    """
    G, m = labels.shape
    counts = np.zeros((G, k), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(G), m), labels.ravel()), 1)
    for g in np.flatnonzero((counts == 0).any(axis=1)):
        lab = labels[g]
        cost = D2[g, np.arange(m), lab]
        order = np.argsort(-cost, kind="stable")
        cnt = counts[g]
        pos = 0
        for e in np.flatnonzero(cnt == 0):
            while cnt[lab[order[pos]]] <= 1:
                pos += 1
            p = order[pos]
            cnt[lab[p]] -= 1
            lab[p] = e
            cnt[e] = 1
            pos += 1


def _means(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    onehot = labels[:, :, None] == np.arange(k)[None, None, :]
    sums = np.einsum("gmk,gmd->gkd", onehot.astype(np.float64), X)
    counts = onehot.sum(axis=1)
    return sums / np.maximum(counts, 1)[:, :, None]


def fit_batch(X: np.ndarray, k: int, rng: np.random.Generator,
              max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
              trace: Optional[Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]] = None,
              ) -> list[KMeansResult]:
    """Fit ``G`` independent k-means problems given as ``X`` of shape (G, m, d).

    Each group stops iterating on its own once its largest centroid
    displacement drops below ``tol``. ``trace`` is called after every
    iteration with (iteration, active group indices, inertia, displacement).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError("batched points must have shape (G, m, d)")
    G, m, _ = X.shape
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > m:
        raise ValueError(f"k={k} exceeds the number of points ({m})")
    C = _plus_plus(X, k, rng)
    iters = np.zeros(G, dtype=np.int64)
    converged = np.zeros(G, dtype=bool)
    active = np.arange(G)
    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        Xa, Ca = X[active], C[active]
        D2 = _sqdist(Xa, Ca)
        lab = np.argmin(D2, axis=2)
        _repair_empty(D2, lab, k)
        newC = _means(Xa, lab, k)
        disp = np.sqrt(np.max(np.sum((newC - Ca) ** 2, axis=2), axis=1))
        if trace is not None:
            resid = Xa - np.take_along_axis(newC, lab[:, :, None], axis=1)
            trace(it, active, np.sum(resid * resid, axis=(1, 2)), disp)
        C[active] = newC
        iters[active] = it
        done = disp < tol
        converged[active[done]] = True
        active = active[~done]

    D2 = _sqdist(X, C)
    labels = np.argmin(D2, axis=2)
    inertia = np.take_along_axis(D2, labels[:, :, None], axis=2)[:, :, 0].sum(axis=1)
    return [KMeansResult(C[g], labels[g], float(inertia[g]), int(iters[g]), bool(converged[g]))
            for g in range(G)]


def kmeans_fit(points, k: int, seed: int = 0, max_iter: int = DEFAULT_MAX_ITER,
               tol: float = DEFAULT_TOL, trace: Optional[TraceFn] = None) -> KMeansResult:
    """Fit ``k`` centroids to ``points`` with k-means++ seeding and Lloyd updates.

    ``trace(iteration, inertia, max_displacement)`` is invoked after each
    Lloyd iteration; inertia is non-increasing across calls.
    """
    X = _as_matrix(points)
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if k > X.shape[0]:
        raise ValueError(f"k={k} exceeds the number of points ({X.shape[0]})")
    hook = None
    if trace is not None:
        def hook(it, _active, inertia, disp):
            trace(it, float(inertia[0]), float(disp[0]))
    return fit_batch(X[None], k, make_rng(seed), max_iter, tol, hook)[0]


def assign(points, centroids) -> np.ndarray:
    """Ordinal of the nearest centroid (squared L2) for each point; ties go low."""
    X = _as_matrix(points)
    C = _as_matrix(centroids)
    if X.shape[1] != C.shape[1]:
        raise DimensionMismatch(f"dimension mismatch: {X.shape[1]} vs {C.shape[1]}")
    return np.argmin(_sqdist(X[None], C[None])[0], axis=1)


def inertia_of(points, centroids, labels) -> float:
    X = _as_matrix(points)
    C = _as_matrix(centroids)
    r = X - C[np.asarray(labels)]
    return float(np.sum(r * r))


class TraceRecorder:
    """Collects (iteration, inertia, max displacement) rows from a fit."""

    def __init__(self):
        self.rows: list[tuple[int, float, float]] = []

    def __call__(self, iteration: int, inertia: float, displacement: float) -> None:
        self.rows.append((iteration, inertia, displacement))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "inertia", "max_displacement"])
            w.writerows(self.rows)
