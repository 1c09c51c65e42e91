"""The multilevel k-means index: bottom-up build, descent queries, updates.

Terminology used throughout:

* a *partition* is a bottom data group, the unit that gets one k-means fit
  at layer 1 and the unit that relocation and splitting operate on;
* a *cell* is the set of data rows whose layer-1 centroid is a given
  centroid. Point and k-NN queries end by scanning exactly one cell.

Rows refer to positions in the index's own point store; element ids are the
stable external identifiers carried alongside.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Literal, Optional, Sequence

import numpy as np

from . import kmeans
from .core import (
    Dataset,
    DimensionMismatch,
    Metric,
    Vector,
    as_dense,
    as_metric,
    check_vector,
    make_rng,
    n_rows,
    rows,
    stack_vector,
    vector_dim,
)

RangeMode = Literal["paper_faithful", "cover_expanded"]
ErrorCriterion = Literal["label", "identity"]
ClassifyRule = Literal["nn1", "partition_majority"]

# rows x candidates x dims materialized at once in batched descent
_BATCH_ELEMS = 1 << 22


@dataclass(frozen=True)
class BuildParams:
    length_group: int
    n_centroids: int
    seed: int = 0
    max_iter: int = kmeans.DEFAULT_MAX_ITER
    tol: float = kmeans.DEFAULT_TOL

    def __post_init__(self):
        if self.length_group < 1 or self.n_centroids < 1:
            raise ValueError("length_group and n_centroids must be positive")
        if self.n_centroids > self.length_group:
            raise ValueError(
                f"n_centroids ({self.n_centroids}) must not exceed length_group ({self.length_group})")
        if self.n_centroids == self.length_group:
            raise ValueError(
                f"n_centroids == length_group ({self.length_group}) never shrinks a layer, "
                "so the build would not terminate")

    @property
    def ratio(self) -> float:
        return self.length_group / self.n_centroids

    def with_seed(self, seed: int) -> BuildParams:
        return BuildParams(self.length_group, self.n_centroids, seed, self.max_iter, self.tol)


def balanced_chunks(items: np.ndarray, n_groups: int) -> list[np.ndarray]:
    """Split ``items`` into ``n_groups`` consecutive chunks of floor size.

    The remainder is spread one extra element per group over the last groups.
    """
    n = len(items)
    if n_groups < 1:
        raise ValueError("need at least one group")
    base, rem = divmod(n, n_groups)
    sizes = np.full(n_groups, base, dtype=np.int64)
    if rem:
        sizes[n_groups - rem:] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [np.asarray(items[bounds[i]:bounds[i + 1]]) for i in range(n_groups)]


def layer_plan(n: int, length_group: int, n_centroids: int) -> list[tuple[int, int]]:
    """(groups, centroids) per layer predicted by the floor recurrence."""
    if n >= length_group and n_centroids >= length_group:
        raise ValueError("the recurrence only terminates when n_centroids < length_group")
    plan = []
    groups = n // length_group
    while groups >= 1:
        total = groups * n_centroids
        plan.append((groups, total))
        groups = total // length_group
    return plan


def predicted_depth(n: int, length_group: int, n_centroids: int) -> int:
    return len(layer_plan(n, length_group, n_centroids))


def modal_label(labels: Iterable[Hashable]):
    """Most frequent label; ties resolve to the smallest tag."""
    counts = Counter(labels)
    if not counts:
        return None
    best = max(counts.values())
    tied = [lab for lab, c in counts.items() if c == best]
    try:
        return min(tied)
    except TypeError:
        return min(tied, key=str)


@dataclass
class CentroidLayer:
    """One level of centroids.

    ``groups[g]`` lists the item indices (rows of the layer below, or data
    rows for layer 1) fitted together; ``members[g]`` the centroid ordinals
    that fit produced; ``labels[g][i]`` the position within ``members[g]`` of
    the centroid that ``groups[g][i]`` belongs to.
    """

    centroids: np.ndarray
    groups: list[np.ndarray]
    members: list[np.ndarray]
    labels: list[np.ndarray]
    children: list[np.ndarray]
    cover: np.ndarray = None
    count: np.ndarray = None

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])

    def group_of(self) -> np.ndarray:
        out = np.full(self.size, -1, dtype=np.int64)
        for g, mem in enumerate(self.members):
            out[mem] = g
        return out


@dataclass
class QueryStats:
    distance_count: int = 0
    layers_traversed: int = 0
    partitions: list[int] = field(default_factory=list)
    cells: list[int] = field(default_factory=list)
    path: list[int] = field(default_factory=list)
    truncated: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def partitions_scanned(self) -> int:
        return len(self.partitions)


@dataclass
class QueryResult:
    hits: list[tuple[int, float]]
    stats: QueryStats

    @property
    def ids(self) -> list[int]:
        return [h[0] for h in self.hits]

    @property
    def distances(self) -> list[float]:
        return [h[1] for h in self.hits]


def _ranked(ids: np.ndarray, dists: np.ndarray) -> list[tuple[int, float]]:
    order = np.lexsort((ids, dists))
    return [(int(ids[i]), float(dists[i])) for i in order]


class MultilevelIndex:
    """Multilevel index over a point store. Use :func:`build` to create one."""

    def __init__(self, params: BuildParams, metric: Metric, points, ids: np.ndarray,
                 labels: Optional[list], layers: list[CentroidLayer],
                 inserted: Iterable[int] = ()):
        self.params = params
        self.metric = metric
        self.points = points
        self.ids = np.asarray(ids, dtype=np.int64)
        self.labels = None if labels is None else list(labels)
        self.layers = layers
        # rows added by insert(): they sit in the cell their descent reached,
        # which need not be their nearest centroid within the group
        self.inserted = {int(r) for r in inserted}
        self._row_of = {int(i): r for r, i in enumerate(self.ids)}
        self._refresh()

    # -- bookkeeping -------------------------------------------------------

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def __len__(self):
        return n_rows(self.points)

    @property
    def partitions(self) -> list[np.ndarray]:
        """Element ids of every bottom partition, by partition id."""
        return [self.ids[g] for g in self._partition_rows()]

    def _partition_rows(self) -> list[np.ndarray]:
        if not self.layers:
            return [np.arange(len(self))]
        return self.layers[0].groups

    def top_centroids(self) -> np.ndarray:
        if not self.layers:
            return np.empty((0, self.dim))
        return self.layers[-1].centroids.copy()

    def _refresh(self) -> None:
        """Recompute derived arrays: leaf of each row, parents, counts, covers."""
        self._childmats = {}
        n = len(self)
        if not self.layers:
            self.leaf_of = np.zeros(n, dtype=np.int64)
            self._cell_part = np.zeros(1, dtype=np.int64)
            return
        self.parents = []
        for li, layer in enumerate(self.layers):
            below = n if li == 0 else self.layers[li - 1].size
            par = np.full(below, -1, dtype=np.int64)
            for c, ch in enumerate(layer.children):
                par[ch] = c
            self.parents.append(par)
        self.leaf_of = self.parents[0]
        if np.any(self.leaf_of < 0):
            raise AssertionError("some rows are not covered by any cell")
        self._cell_part = self.layers[0].group_of()
        anc = self.leaf_of
        for li, layer in enumerate(self.layers):
            if li > 0:
                anc = self.parents[li][anc]
            layer.count = np.bincount(anc, minlength=layer.size)
            cover = np.full(layer.size, -np.inf)
            for s in range(0, n, 65536):
                sel = np.arange(s, min(n, s + 65536))
                d = self.metric.rowwise(rows(self.points, sel), layer.centroids[anc[sel]])
                np.maximum.at(cover, anc[sel], d)
            layer.cover = cover

    def _childmat(self, li: int) -> np.ndarray:
        """Padded (-1) matrix of live children for every centroid of layer ``li``."""
        if li in self._childmats:
            return self._childmats[li]
        layer = self.layers[li]
        live = None if li == 0 else self.layers[li - 1].count > 0
        kids = [ch if live is None else ch[live[ch]] for ch in layer.children]
        width = max(1, max((len(k) for k in kids), default=1))
        mat = np.full((layer.size, width), -1, dtype=np.int64)
        for c, k in enumerate(kids):
            mat[c, :len(k)] = k
        self._childmats[li] = mat
        return mat

    def _check_dim(self, q: Vector) -> np.ndarray:
        if vector_dim(q) != self.dim:
            raise DimensionMismatch(f"query has dim {vector_dim(q)}, index has {self.dim}")
        return as_dense(check_vector(q))

    # -- descent -----------------------------------------------------------

    def _descend(self, q: np.ndarray, stats: QueryStats) -> int:
        """Single-path descent; returns the reached layer-1 centroid."""
        top = self.layers[-1]
        cand = np.flatnonzero(top.count > 0)
        best = -1
        for li in range(self.depth - 1, -1, -1):
            layer = self.layers[li]
            d = self.metric.to_many(q, layer.centroids[cand])
            stats.distance_count += len(cand)
            best = int(cand[np.argmin(d)])
            stats.path.append(best)
            stats.layers_traversed += 1
            if li > 0:
                ch = layer.children[best]
                cand = ch[self.layers[li - 1].count[ch] > 0]
        return best

    def _reach(self, q: np.ndarray, stats: QueryStats) -> np.ndarray:
        """Rows scanned by a point/k-NN query for ``q``."""
        if not self.layers:
            stats.partitions.append(0)
            return np.arange(len(self))
        leaf = self._descend(q, stats)
        stats.cells.append(leaf)
        stats.partitions.append(int(self._cell_part[leaf]))
        return self.layers[0].children[leaf]

    def descend_many(self, Q: np.ndarray) -> np.ndarray:
        """Reached layer-1 centroid for each row of the dense matrix ``Q``.

        Same decisions as the single-query descent, vectorized over queries.
        Returns zeros for an index without centroid layers.
        """
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise DimensionMismatch(f"queries must have shape (m, {self.dim})")
        if not self.layers:
            return np.zeros(len(Q), dtype=np.int64)
        top = self.layers[-1]
        top_live = np.flatnonzero(top.count > 0)
        out = np.empty(len(Q), dtype=np.int64)
        width = max([len(top_live)] + [self._childmat(li).shape[1] for li in range(1, self.depth)])
        step = max(1, _BATCH_ELEMS // max(1, width * self.dim))
        for s in range(0, len(Q), step):
            q = Q[s:s + step]
            cand = np.broadcast_to(top_live, (len(q), len(top_live)))
            for li in range(self.depth - 1, -1, -1):
                layer = self.layers[li]
                mask = cand < 0
                d = self.metric.batched(q, layer.centroids[np.where(mask, 0, cand)])
                d[mask] = np.inf
                best = cand[np.arange(len(q)), np.argmin(d, axis=1)]
                if li > 0:
                    cand = self._childmat(li)[best]
            out[s:s + step] = best
        return out

    # -- queries -----------------------------------------------------------

    def point_query(self, q: Vector) -> tuple[Optional[int], QueryResult]:
        """Exact-match lookup along the single descent path.

        Returns the id of an element identical to ``q`` in the reached cell
        (the lowest id if there are duplicates) or ``None``, together with
        the full ranked scan of that cell.
        """
        qd = self._check_dim(q)
        stats = QueryStats()
        cell = self._reach(qd, stats)
        d = self.metric.to_many(qd, rows(self.points, cell)) if len(cell) else np.empty(0)
        stats.distance_count += len(cell)
        hits = _ranked(self.ids[cell], d)
        found = None
        # zero distance can underflow for distinct vectors, so confirm equality
        for hid, hd in hits:
            if hd != 0.0:
                break
            if np.array_equal(rows(self.points, [self._row_of[hid]])[0], qd):
                found = hid
                break
        return found, QueryResult(hits, stats)

    def knn_query(self, q: Vector, k: int) -> QueryResult:
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
        qd = self._check_dim(q)
        stats = QueryStats()
        cell = self._reach(qd, stats)
        d = self.metric.to_many(qd, rows(self.points, cell)) if len(cell) else np.empty(0)
        stats.distance_count += len(cell)
        hits = _ranked(self.ids[cell], d)
        stats.truncated = len(hits) < k
        return QueryResult(hits[:k], stats)

    def range_query(self, q: Vector, radius: float,
                    mode: RangeMode = "paper_faithful") -> QueryResult:
        """All elements within ``radius`` of ``q`` found by multi-path descent.

        ``paper_faithful`` keeps centroids within ``radius`` of the query.
        ``cover_expanded`` keeps centroids within ``radius`` plus their cover
        radius, which never discards a qualifying element.
        """
        if radius < 0:
            raise ValueError("radius must be non-negative")
        if mode not in ("paper_faithful", "cover_expanded"):
            raise ValueError(f"unknown range mode {mode!r}")
        qd = self._check_dim(q)
        stats = QueryStats()
        if not self.layers:
            scan = np.arange(len(self))
            stats.partitions.append(0)
        else:
            cand = np.flatnonzero(self.layers[-1].count > 0)
            for li in range(self.depth - 1, -1, -1):
                layer = self.layers[li]
                d = self.metric.to_many(qd, layer.centroids[cand]) if len(cand) else np.empty(0)
                stats.distance_count += len(cand)
                stats.layers_traversed += 1
                bound = np.full(len(cand), float(radius))
                if mode == "cover_expanded":
                    bound = bound + layer.cover[cand]
                    # floating-point guard so rounding never prunes a true hit
                    bound = bound * (1 + 1e-12) + 1e-12
                keep = cand[d <= bound]
                if li > 0:
                    nxt = [layer.children[c] for c in keep]
                    cand = np.concatenate(nxt) if nxt else np.empty(0, dtype=np.int64)
                    cand = np.sort(cand[self.layers[li - 1].count[cand] > 0])
                else:
                    stats.cells = [int(c) for c in keep]
                    stats.partitions = sorted({int(self._cell_part[c]) for c in keep})
                    kids = [layer.children[c] for c in keep]
                    scan = np.concatenate(kids) if kids else np.empty(0, dtype=np.int64)
        d = self.metric.to_many(qd, rows(self.points, scan)) if len(scan) else np.empty(0)
        stats.distance_count += len(scan)
        inside = d <= radius
        return QueryResult(_ranked(self.ids[scan][inside], d[inside]), stats)

    # -- updates -----------------------------------------------------------

    def insert(self, point: Vector, id: int, label: Hashable = None) -> int:
        """Store ``point`` in the cell its descent reaches; returns the partition id."""
        id = int(id)
        if id in self._row_of:
            raise KeyError(f"duplicate element id {id}")
        qd = self._check_dim(point)
        stats = QueryStats()
        row = len(self)
        if self.layers:
            leaf = self._descend(qd, stats)
            part = int(self._cell_part[leaf])
        else:
            leaf, part = -1, 0
        self.points = stack_vector(self.points, point)
        self.ids = np.append(self.ids, id)
        self._row_of[id] = row
        self.inserted.add(row)
        if self.labels is not None:
            self.labels.append(label)
        if not self.layers:
            self.leaf_of = np.zeros(len(self), dtype=np.int64)
            return part
        base = self.layers[0]
        base.children[leaf] = np.append(base.children[leaf], row)
        base.groups[part] = np.append(base.groups[part], row)
        pos = int(np.flatnonzero(base.members[part] == leaf)[0])
        base.labels[part] = np.append(base.labels[part], pos)
        self.leaf_of = np.append(self.leaf_of, leaf)
        self.parents[0] = self.leaf_of
        node = leaf
        for li, layer in enumerate(self.layers):
            if li > 0:
                node = int(self.parents[li][node])
            layer.count[node] += 1
            dc = self.metric.pair(qd, layer.centroids[node])
            layer.cover[node] = max(layer.cover[node], dc)
        self._childmats = {}
        return part

    def split_partition(self, partition: int, threshold: int) -> list[int]:
        """Split an oversized partition and refit only its local layer-1 part.

        The partition's rows are shuffled and cut into
        ``ceil(size / length_group)`` groups, each refitted with up to
        ``n_centroids`` centroids. The new centroids are appended to layer 1
        and attached to their nearest centroid in the layer-2 group that
        parented the old ones; the old centroids are retired (left without
        children). No other centroid moves. Returns the ids of the resulting
        partitions, the first being ``partition`` itself.
        """
        parts = self._partition_rows()
        if not 0 <= partition < len(parts):
            raise KeyError(f"unknown partition {partition}")
        members = parts[partition]
        if len(members) <= threshold:
            raise ValueError(
                f"partition {partition} has {len(members)} elements, not above threshold {threshold}")
        L, K = self.params.length_group, self.params.n_centroids
        if not self.layers:
            rebuilt = build(self._as_dataset(), self.params, self.metric)
            self.layers = rebuilt.layers
            self.inserted.clear()
            self._refresh()
            return list(range(len(self.layers[0].groups))) if self.layers else [0]
        base = self.layers[0]
        n_split = math.ceil(len(members) / L)
        rng = make_rng(self.params.seed, 2, partition, base.size)
        chunks = balanced_chunks(rng.permutation(members), n_split)
        old = base.members[partition]
        self.inserted.difference_update(int(r) for r in members)
        new_cents, new_children, new_members, new_labels = [], [], [], []
        offset = base.size
        for j, chunk in enumerate(chunks):
            k = min(K, len(chunk))
            res = kmeans.fit_batch(rows(self.points, chunk)[None], k,
                                   make_rng(self.params.seed, 3, partition, base.size, j),
                                   self.params.max_iter, self.params.tol)[0]
            new_cents.append(res.centroids)
            new_members.append(np.arange(offset, offset + k))
            new_labels.append(res.labels)
            new_children.extend(np.sort(chunk[res.labels == c]) for c in range(k))
            offset += k
        base.centroids = np.vstack([base.centroids] + new_cents)
        for c in old:
            base.children[c] = np.empty(0, dtype=np.int64)
        base.children.extend(new_children)
        part_ids = [partition]
        base.groups[partition], base.members[partition], base.labels[partition] = \
            chunks[0], new_members[0], new_labels[0]
        for j in range(1, len(chunks)):
            part_ids.append(len(base.groups))
            base.groups.append(chunks[j])
            base.members.append(new_members[j])
            base.labels.append(new_labels[j])
        if self.depth > 1:
            self._reattach(old, np.concatenate(new_members))
        self._refresh()
        return part_ids

    def _reattach(self, old: np.ndarray, new: np.ndarray) -> None:
        """Swap retired layer-1 centroids for new ones inside layer 2."""
        up = self.layers[1]
        parent = self.parents[1]
        g_of = up.group_of()
        home = int(g_of[parent[old[0]]])
        for c in old:
            p = parent[c]
            up.children[p] = up.children[p][up.children[p] != c]
        for g, grp in enumerate(up.groups):
            keep = ~np.isin(grp, old)
            if not keep.all():
                up.groups[g], up.labels[g] = grp[keep], up.labels[g][keep]
        mem = up.members[home]
        pos = kmeans.assign(self.layers[0].centroids[new], up.centroids[mem])
        for c, p in zip(new, pos):
            up.children[mem[p]] = np.sort(np.append(up.children[mem[p]], c))
        up.groups[home] = np.concatenate([up.groups[home], new])
        up.labels[home] = np.concatenate([up.labels[home], pos])

    def _as_dataset(self) -> Dataset:
        return Dataset(self.points, self.ids, self.labels)

    # -- evaluation --------------------------------------------------------

    def rows_for(self, dataset: Dataset) -> np.ndarray:
        try:
            return np.array([self._row_of[int(i)] for i in dataset.ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"element id {exc.args[0]} is not indexed") from None

    def _reached_cells(self, dataset: Dataset) -> np.ndarray:
        out = np.empty(len(dataset), dtype=np.int64)
        step = 4096
        for s in range(0, len(dataset), step):
            sel = np.arange(s, min(len(dataset), s + step))
            out[sel] = self.descend_many(dataset.dense_rows(sel))
        return out

    def _cell_modes(self) -> list:
        if self.labels is None:
            raise ValueError("index holds no labels")
        if not self.layers:
            return [modal_label(self.labels)]
        return [modal_label(self.labels[r] for r in ch) for ch in self.layers[0].children]

    def search_outcomes(self, dataset: Dataset, criterion: ErrorCriterion = "label"):
        """Per-element (found, reached partition) for an exhaustive self-search.

        ``identity``: found when the element's own row lies in the reached
        cell, i.e. its point query returns it. ``label``: found when the
        modal label of the reached cell equals the element's label.
        """
        own = self.rows_for(dataset)
        reached = self._reached_cells(dataset)
        if criterion == "identity":
            found = self.leaf_of[own] == reached if self.layers else np.ones(len(own), bool)
        elif criterion == "label":
            labels = dataset.labels if dataset.labels is not None else None
            if labels is None:
                raise ValueError("label criterion needs a labeled dataset")
            modes = self._cell_modes()
            found = np.array([modes[c] == lab for c, lab in zip(reached, labels)], dtype=bool)
        else:
            raise ValueError(f"unknown criterion {criterion!r}")
        return found, self._cell_part[reached]

    def exhaustive_error(self, dataset: Dataset, criterion: ErrorCriterion = "label") -> float:
        """Fraction of indexed elements whose own point search fails."""
        found, _ = self.search_outcomes(dataset, criterion)
        return float(np.count_nonzero(~found) / len(found)) if len(found) else 0.0

    def classify(self, q: Vector, rule: ClassifyRule = "nn1", exclude_id: Optional[int] = None):
        """Category tag for ``q`` from the cell its descent reaches."""
        if self.labels is None:
            raise ValueError("classification needs an index built over labeled data")
        qd = self._check_dim(q)
        stats = QueryStats()
        cell = self._reach(qd, stats)
        if exclude_id is not None:
            cell = cell[self.ids[cell] != exclude_id]
            # a held-out element may have been alone in its cell: fall back to
            # the closest other non-empty cell under the nearest ancestor
            level = 1
            while len(cell) == 0 and level < len(stats.path):
                cell = self._nearest_cell_under(qd, level, stats.path[-1 - level], exclude_id)
                level += 1
            if len(cell) == 0:
                cell = self._nearest_cell_under(qd, None, None, exclude_id)
        if len(cell) == 0:
            return None
        if rule == "nn1":
            d = self.metric.to_many(qd, rows(self.points, cell))
            best = np.lexsort((self.ids[cell], d))[0]
            return self.labels[cell[best]]
        if rule == "partition_majority":
            return modal_label(self.labels[r] for r in cell)
        raise ValueError(f"unknown rule {rule!r}")

    def _nearest_cell_under(self, q: np.ndarray, layer_idx: Optional[int], node: Optional[int],
                            exclude_id: int) -> np.ndarray:
        """Rows of the cell closest to ``q`` beneath a centroid, ignoring ``exclude_id``.

        ``stats.path`` runs top-down, so the ancestor at layer index ``layer_idx``
        is its entry ``-1 - layer_idx``; ``None`` searches every cell.
        """
        if layer_idx is None:
            cells = np.arange(self.layers[0].size) if self.layers else None
        else:
            cells = np.array([node], dtype=np.int64)
            for li in range(layer_idx, 0, -1):
                kids = [self.layers[li].children[c] for c in cells]
                cells = np.concatenate(kids) if kids else np.empty(0, dtype=np.int64)
        if cells is None:
            return np.flatnonzero(self.ids != exclude_id)
        d = self.metric.to_many(q, self.layers[0].centroids[cells]) if len(cells) else np.empty(0)
        for c in cells[np.lexsort((cells, d))]:
            rows_c = self.layers[0].children[c]
            rows_c = rows_c[self.ids[rows_c] != exclude_id]
            if len(rows_c):
                return rows_c
        return np.empty(0, dtype=np.int64)

    def classification_error(self, dataset: Dataset, rule: ClassifyRule = "nn1",
                             leave_one_out: bool = True) -> float:
        """Mismatch rate of :meth:`classify` over the dataset's own elements."""
        if dataset.labels is None:
            raise ValueError("classification needs a labeled dataset")
        wrong = 0
        for i in range(len(dataset)):
            ex = int(dataset.ids[i]) if leave_one_out else None
            wrong += self.classify(dataset.point(i), rule, ex) != dataset.labels[i]
        return wrong / len(dataset) if len(dataset) else 0.0

    # -- structure checks --------------------------------------------------

    def check_invariants(self) -> list[str]:
        """Problems with the layer structure; empty when consistent.

        Inserted rows are exempt from the nearest-centroid check, since
        insertion follows the descent rather than refitting the group.
        """
        problems = []
        for li, layer in enumerate(self.layers):
            below = len(self) if li == 0 else self.layers[li - 1].size
            src = self.points if li == 0 else self.layers[li - 1].centroids
            seen = np.zeros(below, dtype=np.int64)
            for g, (grp, mem, lab) in enumerate(zip(layer.groups, layer.members, layer.labels)):
                seen[grp] += 1
                union = np.sort(np.concatenate([layer.children[c] for c in mem]))
                if not np.array_equal(union, np.sort(grp)):
                    problems.append(f"layer {li + 1} group {g}: children do not partition the chunk")
                for pos, item in zip(lab, grp):
                    if item not in set(layer.children[mem[pos]].tolist()):
                        problems.append(f"layer {li + 1} group {g}: label of item {item} disagrees")
                        break
                fitted = np.array([li > 0 or int(r) not in self.inserted for r in grp], dtype=bool)
                if fitted.any() and not np.array_equal(
                        kmeans.assign(rows(src, grp[fitted]), layer.centroids[mem]), lab[fitted]):
                    problems.append(f"layer {li + 1} group {g}: labels are not nearest centroids")
            live = np.ones(below, bool) if li == 0 else self.layers[li - 1].count > 0
            if np.any(seen[live] != 1):
                problems.append(f"layer {li + 1}: groups do not cover the layer below exactly once")
        return problems


def _fit_layer(src, chunks: list[np.ndarray], params: BuildParams, layer_no: int,
               strict: bool) -> CentroidLayer:
    K = params.n_centroids
    by_size: dict[int, list[int]] = {}
    for g, ch in enumerate(chunks):
        if len(ch) == 0:
            raise ValueError(f"layer {layer_no + 1} group {g} is empty")
        if strict and K > len(ch):
            raise ValueError(
                f"layer {layer_no + 1} group {g} has {len(ch)} items, fewer than n_centroids={K}")
        by_size.setdefault(len(ch), []).append(g)
    results: list = [None] * len(chunks)
    for m in sorted(by_size):
        gs = by_size[m]
        X = np.stack([rows(src, chunks[g]) for g in gs])
        fitted = kmeans.fit_batch(X, min(K, m), make_rng(params.seed, 1, layer_no, m),
                                  params.max_iter, params.tol)
        for g, res in zip(gs, fitted):
            results[g] = res
    cents, members, labels, children = [], [], [], []
    offset = 0
    for ch, res in zip(chunks, results):
        k = res.k
        cents.append(res.centroids)
        members.append(np.arange(offset, offset + k))
        labels.append(res.labels)
        children.extend(np.sort(ch[res.labels == c]) for c in range(k))
        offset += k
    return CentroidLayer(np.vstack(cents), [np.asarray(c) for c in chunks], members, labels, children)


def build(dataset: Dataset, params: BuildParams, metric=None,
          partitions: Optional[Sequence[Sequence[int]]] = None) -> MultilevelIndex:
    """Build the multilevel index bottom-up.

    Without ``partitions`` the rows are shuffled with the build seed and cut
    into ``len // length_group`` balanced groups. With ``partitions`` (lists
    of row positions, as relocation produces) those groups are used as given
    and a group smaller than ``n_centroids`` gets one centroid per element.
    Each higher layer re-chunks the flattened centroids below into groups of
    ``length_group`` and stops once fewer than one full group remains.
    """
    metric = as_metric(metric)
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot index an empty dataset")
    if partitions is None:
        n_groups = n // params.length_group
        if n_groups < 1:
            return MultilevelIndex(params, metric, dataset.points, dataset.ids, dataset.labels, [])
        perm = make_rng(params.seed, 0).permutation(n)
        chunks = balanced_chunks(perm, n_groups)
        strict = True
    else:
        chunks = [np.asarray(p, dtype=np.int64) for p in partitions if len(p)]
        flat = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        if np.unique(flat).size != n or flat.size != n:
            raise ValueError("partitions must cover every row exactly once")
        strict = False
    layers: list[CentroidLayer] = []
    src = dataset.points
    while True:
        layer = _fit_layer(src, chunks, params, len(layers), strict)
        layers.append(layer)
        n_groups = layer.size // params.length_group
        if n_groups < 1:
            break
        chunks = balanced_chunks(np.arange(layer.size), n_groups)
        src = layer.centroids
    return MultilevelIndex(params, metric, dataset.points, dataset.ids, dataset.labels, layers)


@dataclass
class RelocationReport:
    errors: list[float]
    best_iteration: int
    index: MultilevelIndex
    moved: list[int]
    depths: list[int] = field(default_factory=list)
    build_times: list[float] = field(default_factory=list)
    search_times: list[float] = field(default_factory=list)

    @property
    def best_error(self) -> float:
        return self.errors[self.best_iteration]


def relocate_and_rebuild(index: MultilevelIndex, dataset: Dataset, iterations: int,
                         criterion: ErrorCriterion = "label",
                         on_iteration: Optional[Callable[[int, MultilevelIndex], None]] = None,
                         ) -> RelocationReport:
    """Iteratively move not-found elements to the partition their search reached.

    Entry 0 of ``errors`` is the error of ``index`` itself. Iteration ``i``
    rebuilds from the relocated partitions with seed ``base_seed + i``.
    ``index`` must have been built from ``dataset`` without later inserts.
    ``on_iteration(i, index_i)`` sees every index, the initial one included.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if len(index) != len(dataset) or not np.array_equal(index.rows_for(dataset), np.arange(len(dataset))):
        raise ValueError("relocation needs the index built directly from this dataset")
    errors, moved, depths, build_times, search_times = [], [], [], [], []
    current = index
    for it in range(iterations + 1):
        t0 = time.perf_counter()
        found, reached = current.search_outcomes(dataset, criterion)
        search_times.append(time.perf_counter() - t0)
        errors.append(float(np.count_nonzero(~found) / len(found)) if len(found) else 0.0)
        depths.append(current.depth)
        if on_iteration is not None:
            on_iteration(it, current)
        if it == iterations:
            break
        parts = [list(p) for p in current._partition_rows()]
        home = current._cell_part[current.leaf_of] if current.layers else np.zeros(len(dataset), int)
        lost = np.flatnonzero(~found)
        moved.append(int(lost.size))
        drop = {}
        for r in lost:
            drop.setdefault(int(home[r]), set()).add(int(r))
        parts = [[r for r in p if r not in drop.get(pid, ())] for pid, p in enumerate(parts)]
        for r in lost:
            parts[int(reached[r])].append(int(r))
        params = index.params.with_seed(index.params.seed + it + 1)
        t0 = time.perf_counter()
        current = build(dataset, params, index.metric, partitions=parts) if index.layers \
            else build(dataset, params, index.metric)
        build_times.append(time.perf_counter() - t0)
    best = int(np.argmin(errors))
    return RelocationReport(errors, best, current, moved, depths, build_times, search_times)
