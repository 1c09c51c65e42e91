"""In-process simulation of a multi-node deployment.

Every node indexes only its own data. A coordinator keeps each node's
top-layer centroids and routes a query to the nodes owning at least one top
centroid closer than a threshold ``epsilon``. All traffic goes through a
:class:`MessageBus` so the absence of node-to-node messages during the build
can be asserted, and so a real transport could replace it.
"""

from __future__ import annotations

import json
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import Dataset, Metric, Vector, as_dense, as_metric, check_vector, make_rng, rows
from .index import BuildParams, MultilevelIndex, QueryResult, QueryStats, build

COORDINATOR = "coordinator"

NodeId = Hashable


class NodeBuildError(RuntimeError):
    """A node failed to build its local index."""

    def __init__(self, node_id, cause: BaseException):
        super().__init__(f"node {node_id!r}: {type(cause).__name__}: {cause}")
        self.node_id = node_id
        self.cause = cause


class MessageBus:
    """Counts messages by kind and separately counts node-to-node traffic."""

    def __init__(self):
        self.counts: Counter = Counter()
        self.inter_node = 0
        self.log: list[tuple] = []

    def send(self, src, dst, kind: str, payload=None):
        self.counts[kind] += 1
        if src != COORDINATOR and dst != COORDINATOR:
            self.inter_node += 1
        self.log.append((src, dst, kind))
        return payload


@dataclass
class NodeHandle:
    """One simulated node: its data partitions and one index per partition."""

    node_id: NodeId
    datasets: list[Dataset]
    indexes: list[MultilevelIndex] = field(default_factory=list)
    build_time: float = 0.0

    @property
    def size(self) -> int:
        return sum(len(d) for d in self.datasets)

    def element_ids(self) -> np.ndarray:
        return np.concatenate([ix.ids for ix in self.indexes]) if self.indexes \
            else np.empty(0, dtype=np.int64)

    def top_centroids(self) -> np.ndarray:
        """Stacked top layers of the node's indexes.

        An index too small to have any centroid layer is summarized by its
        own points, so a tiny node is still routable.
        """
        tops = []
        for ix in self.indexes:
            if ix.depth:
                tops.append(ix.top_centroids())
            else:
                tops.append(rows(ix.points, np.arange(len(ix))))
        return np.vstack(tops) if tops else np.empty((0, 0))

    def knn_query(self, q: Vector, k: int) -> QueryResult:
        """Local k-NN, merged over the node's indexes by (distance, id)."""
        results = [ix.knn_query(q, k) for ix in self.indexes]
        if len(results) == 1:
            return results[0]
        stats = QueryStats()
        hits = []
        for r in results:
            hits.extend(r.hits)
            stats.distance_count += r.stats.distance_count
            stats.layers_traversed = max(stats.layers_traversed, r.stats.layers_traversed)
            stats.partitions.extend(r.stats.partitions)
        hits.sort(key=lambda h: (h[1], h[0]))
        stats.truncated = len(hits) < k
        return QueryResult(hits[:k], stats)


class ClusterCoordinator:
    """Registry of top-layer centroids per node (or per child coordinator)."""

    def __init__(self, metric: Union[str, Metric, None] = None, epsilon: Optional[float] = None):
        self.metric = as_metric(metric)
        self.epsilon = epsilon
        self.registry: dict[NodeId, np.ndarray] = {}
        self.children: dict[NodeId, ClusterCoordinator] = {}

    def register(self, node_id: NodeId, centroids: np.ndarray) -> None:
        if node_id in self.registry:
            raise KeyError(f"node {node_id!r} is already registered")
        self.registry[node_id] = np.array(centroids, dtype=np.float64, copy=True)

    @classmethod
    def over(cls, children: Mapping[NodeId, ClusterCoordinator],
             epsilon: Optional[float] = None) -> ClusterCoordinator:
        """A coordinator whose entries are whole child coordinators.

        Each entry holds the union of the child's registered centroids, so a
        query reaches a child exactly when it would reach one of its nodes.
        """
        metrics = {c.metric for c in children.values()}
        if len(metrics) > 1:
            raise ValueError("child coordinators use different metrics")
        parent = cls(next(iter(metrics)) if metrics else None, epsilon)
        for name, child in children.items():
            mats = [m for m in child.registry.values() if m.size]
            parent.register(name, np.vstack(mats) if mats else np.empty((0, 0)))
            parent.children[name] = child
        return parent

    def _eps(self, epsilon: Optional[float]) -> float:
        if epsilon is None:
            epsilon = self.epsilon
        return math.inf if epsilon is None else float(epsilon)

    def route(self, q: Vector, epsilon: Optional[float] = None) -> list[NodeId]:
        """Entries with a top centroid strictly closer than ``epsilon``.

        ``epsilon`` defaults to the coordinator's own; ``inf`` selects all.
        The result keeps registration order.
        """
        if not self.registry:
            raise ValueError("the registry is empty")
        eps = self._eps(epsilon)
        if math.isinf(eps) and eps > 0:
            return list(self.registry)
        qd = as_dense(check_vector(q))
        out = []
        for node_id, cents in self.registry.items():
            if cents.size and np.min(self.metric.to_many(qd, cents)) < eps:
                out.append(node_id)
        return out

    def route_leaves(self, q: Vector, epsilon: Optional[float] = None) -> list[NodeId]:
        """Node ids reached through any nesting of coordinators."""
        out = []
        for entry in self.route(q, epsilon):
            child = self.children.get(entry)
            out.extend(child.route_leaves(q, epsilon) if child is not None else [entry])
        return out


def _as_datasets(data) -> list[Dataset]:
    if isinstance(data, Dataset):
        return [data]
    parts = list(data)
    if not parts or not all(isinstance(d, Dataset) for d in parts):
        raise TypeError("node data must be a Dataset or a non-empty list of Datasets")
    return parts


def build_cluster(partitioned: Mapping[NodeId, Union[Dataset, Sequence[Dataset]]],
                  params: BuildParams, metric=None, *, bus: Optional[MessageBus] = None,
                  workers: int = 1, epsilon: Optional[float] = None,
                  ) -> tuple[dict[NodeId, NodeHandle], ClusterCoordinator]:
    """Build every node's index from its local data and register the top layers.

    Nodes never exchange messages; the only traffic is each node sending its
    top centroids to the coordinator. Failures are re-raised as
    :class:`NodeBuildError` naming the node.
    """
    if not partitioned:
        raise ValueError("a cluster needs at least one node")
    metric = as_metric(metric)
    bus = bus if bus is not None else MessageBus()
    nodes = {nid: NodeHandle(nid, _as_datasets(d)) for nid, d in partitioned.items()}

    def build_node(node: NodeHandle) -> NodeHandle:
        t0 = time.perf_counter()
        try:
            node.indexes = [build(d, params, metric) for d in node.datasets]
        except Exception as exc:  # noqa: BLE001 - re-raised with node context
            raise NodeBuildError(node.node_id, exc) from exc
        node.build_time = time.perf_counter() - t0
        return node

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(build_node, nodes.values()))
    else:
        for node in nodes.values():
            build_node(node)

    coordinator = ClusterCoordinator(metric, epsilon)
    for nid, node in nodes.items():
        coordinator.register(nid, bus.send(nid, COORDINATOR, "register", node.top_centroids()))
    return nodes, coordinator


def cluster_knn(nodes: Mapping[NodeId, NodeHandle], coordinator: ClusterCoordinator,
                q: Vector, k: int, epsilon: Optional[float] = None, *,
                bus: Optional[MessageBus] = None) -> QueryResult:
    """Fan a k-NN query out to the routed nodes and merge the local answers.

    Merge order is (distance, node registration order, element id). The
    stats' ``extra`` lists queried and skipped nodes, the node of every hit,
    and flags an empty routing.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    bus = bus if bus is not None else MessageBus()
    routed = coordinator.route_leaves(q, epsilon)
    order = {nid: i for i, nid in enumerate(nodes)}
    stats = QueryStats()
    merged = []
    for nid in routed:
        bus.send(COORDINATOR, nid, "knn")
        local = nodes[nid].knn_query(q, k)
        bus.send(nid, COORDINATOR, "result")
        stats.distance_count += local.stats.distance_count
        stats.layers_traversed = max(stats.layers_traversed, local.stats.layers_traversed)
        merged.extend((d, order[nid], eid, nid) for eid, d in local.hits)
    if not math.isinf(coordinator._eps(epsilon)):
        # routing compared the query with every registered top centroid
        stats.distance_count += sum(len(c) for c in coordinator.registry.values())
    merged.sort(key=lambda t: t[:3])
    merged = merged[:k]
    stats.truncated = len(merged) < k
    stats.extra = {
        "nodes_queried": list(routed),
        "nodes_skipped": [nid for nid in nodes if nid not in set(routed)],
        "hit_nodes": [t[3] for t in merged],
        "empty_route": not routed,
    }
    return QueryResult([(int(t[2]), float(t[0])) for t in merged], stats)


# -- topology --------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    """Cluster layout: node count, data assignment seed, default epsilon."""

    nodes: int = 4
    assignment_seed: int = 0
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("topology needs at least one node")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> Topology:
        unknown = set(d) - {"nodes", "assignment_seed", "epsilon"}
        if unknown:
            raise ValueError(f"unknown topology keys: {sorted(unknown)}")
        eps = d.get("epsilon")
        return cls(int(d.get("nodes", 4)), int(d.get("assignment_seed", 0)),
                   None if eps is None else float(eps))

    @classmethod
    def load(cls, path) -> Topology:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"nodes": self.nodes, "assignment_seed": self.assignment_seed,
                "epsilon": self.epsilon}


def partition_dataset(dataset: Dataset, n_nodes: int, seed: int = 0) -> dict[int, Dataset]:
    """Randomly deal the elements into ``n_nodes`` near-equal node datasets."""
    if n_nodes < 1:
        raise ValueError("need at least one node")
    perm = make_rng(seed, 40).permutation(len(dataset))
    return {i: dataset.subset(np.sort(perm[i::n_nodes])) for i in range(n_nodes)}
