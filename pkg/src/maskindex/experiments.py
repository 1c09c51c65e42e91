"""Benchmark experiments producing versioned CSV tables.

Each runner takes an :class:`ExperimentConfig` and returns a list of record
dicts. :func:`write_records` serializes them under a header comment naming
the experiment and a hash of the config. Wall-clock columns always come last,
so stripping them leaves output that is byte-identical across re-runs.
Error rates are fractions in [0, 1].
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import kmeans
from .core import Dataset, as_metric, make_rng
from .datasets import (
    OVERLAP_SPACING,
    bombard_spec,
    gen_clouds,
    light_stem,
    load_reuters_like,
    overlap_preset,
    synthetic_corpus,
    tfidf_encode,
)
from .distributed import MessageBus, build_cluster, cluster_knn, partition_dataset
from .index import BuildParams, balanced_chunks, build, predicted_depth, relocate_and_rebuild
from .io import read_dataset

EXPERIMENTS = ("bombard", "gauss_bench", "size_sweep", "param_sweep", "ratio_sweep",
               "text_bench", "cluster_bench")
TIMING_COLUMNS = ("tree_time", "search_time")
CSV_MAGIC = "# mask-bench v1"

REFERENCE_GRID = [(10, 5), (30, 15), (50, 25), (70, 35), (90, 45), (110, 55)]


@dataclass
class ExperimentConfig:
    """Everything an experiment run depends on; unused fields are ignored."""

    experiment: str
    presets: list = field(default_factory=lambda: ["GNO", "GMO", "GRO"])
    points_per_cloud: list = field(default_factory=lambda: [200])
    n_clouds: int = 8
    data: Optional[str] = None
    grid: list = field(default_factory=lambda: [(16, 8)])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    iterations: int = 4
    criterion: str = "label"
    metric: str = "l2"
    # text
    corpus: Optional[str] = None
    category_sets: list = field(default_factory=lambda: [["alpha", "beta"]])
    stemming: list = field(default_factory=lambda: [False, True])
    rule: str = "nn1"
    text_overlap: float = 0.0
    docs_per_class: int = 60
    # bombard
    top_down_k: list = field(default_factory=lambda: [4, 8, 16, 32, 64, 128])
    bottom_up_k: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    bottom_up_groups: int = 4
    # cluster
    nodes: int = 4
    assignment_seed: int = 0
    epsilons: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, math.inf])
    n_queries: int = 200
    k: int = 1
    out: Optional[str] = None

    def __post_init__(self):
        self.grid = [tuple(int(v) for v in pair) for pair in self.grid]
        self.epsilons = [math.inf if e is None or e == "inf" else float(e) for e in self.epsilons]
        self.validate()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        for L, K in self.grid:
            if L < 1 or K < 1 or K >= L:
                raise ValueError(f"grid pair ({L}, {K}) needs 1 <= n_centroids < length_group")
        if not self.seeds or any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be a non-empty list of non-negative integers")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        for p in self.presets:
            if p.upper() not in OVERLAP_SPACING:
                raise ValueError(f"unknown preset {p!r}")
        if any(n < 1 for n in self.points_per_cloud):
            raise ValueError("points_per_cloud entries must be positive")
        if self.criterion not in ("label", "identity"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.rule not in ("nn1", "partition_majority"):
            raise ValueError(f"unknown classification rule {self.rule!r}")
        as_metric(self.metric)
        if self.nodes < 1 or self.n_queries < 1 or self.k < 1:
            raise ValueError("nodes, n_queries and k must be positive")
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilons must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = [list(p) for p in self.grid]
        d["epsilons"] = ["inf" if math.isinf(e) else e for e in self.epsilons]
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Defaults mirroring each experiment's reference setup, scaled for a desk."""
    base: dict = {"experiment": experiment}
    if experiment == "gauss_bench":
        base.update(iterations=8)
    elif experiment == "size_sweep":
        base.update(presets=["GNO", "GMO"], points_per_cloud=[200, 1000], iterations=0)
    elif experiment == "param_sweep":
        base.update(presets=["GMO"], points_per_cloud=[1000], grid=REFERENCE_GRID, iterations=0)
    elif experiment == "ratio_sweep":
        base.update(presets=["GMO"], points_per_cloud=[1000], iterations=0,
                    grid=[(L, max(1, round(L * f))) for L in (10, 50, 90) for f in (0.2, 0.5, 0.8)])
    elif experiment == "text_bench":
        base.update(iterations=10, grid=[(16, 8)], seeds=[0])
    elif experiment == "bombard":
        base.update(seeds=[0], points_per_cloud=[250])
    elif experiment == "cluster_bench":
        base.update(presets=["GNO"], seeds=[0], iterations=0)
    base.update(overrides)
    return ExperimentConfig(**base)


# -- records and CSV -----------------------------------------------------

def check_record(rec: dict) -> list[str]:
    """Problems with one record: negative times, error outside [0, 1], depth."""
    problems = []
    for col in TIMING_COLUMNS:
        if col in rec and rec[col] is not None and rec[col] < 0:
            problems.append(f"{col} is negative")
    for col in ("error_rate", "identity_error", "classification_error", "recall", "exact_recall"):
        v = rec.get(col)
        if v is not None and v != "" and not 0.0 <= v <= 1.0:
            problems.append(f"{col}={v} outside [0, 1]")
    if rec.get("iteration") == 0 and "predicted_depth" in rec and rec["tree_depth"] != rec["predicted_depth"]:
        problems.append(f"tree_depth {rec['tree_depth']} != predicted {rec['predicted_depth']}")
    return problems


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def columns_of(records: list[dict]) -> list[str]:
    cols: list[str] = []
    for rec in records:
        for k in rec:
            if k not in cols and k not in TIMING_COLUMNS:
                cols.append(k)
    return cols + [c for c in TIMING_COLUMNS if any(c in r for r in records)]


def render_csv(records: list[dict], config: ExperimentConfig, experiment: Optional[str] = None) -> str:
    buf = io.StringIO()
    buf.write(f"{CSV_MAGIC} experiment={experiment or config.experiment} "
              f"config_hash={config.config_hash()}\n")
    cols = columns_of(records)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rec in records:
        w.writerow([_fmt(rec.get(c)) for c in cols])
    return buf.getvalue()


def write_records(records: list[dict], config: ExperimentConfig, path,
                  experiment: Optional[str] = None) -> None:
    Path(path).write_text(render_csv(records, config, experiment))


def read_records(path) -> tuple[dict, list[dict]]:
    """Header fields and rows (as strings) of a bench CSV."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(CSV_MAGIC):
        raise ValueError(f"{path}: not a bench CSV")
    header = dict(tok.split("=", 1) for tok in lines[0].split()[3:])
    return header, list(csv.DictReader(lines[1:]))


# -- cloud experiments ---------------------------------------------------

def _cloud_datasets(config: ExperimentConfig, seed: int):
    if config.data:
        ds = read_dataset(config.data)
        yield Path(config.data).name, len(ds) // max(1, config.n_clouds), ds
        return
    for preset in config.presets:
        for npc in config.points_per_cloud:
            yield preset.upper(), npc, gen_clouds(overlap_preset(preset, npc, seed, config.n_clouds))


def _with_context(fn: Callable, context: str):
    try:
        return fn()
    except Exception as exc:
        raise type(exc)(f"[{context}] {exc}") from exc


def run_cloud_bench(config: ExperimentConfig, log: Optional[Callable[[str], None]] = None) -> list[dict]:
    """Build, exhaustive self-search and relocation over presets x sizes x grid x seeds.

    One record per relocation iteration; iteration 0 is the fresh build.
    """
    metric = as_metric(config.metric)
    records = []
    cells = []
    for seed in config.seeds:
        for name, npc, ds in _cloud_datasets(config, seed):
            for L, K in config.grid:
                cells.append((name, npc, ds, L, K, seed))
    order = [p.upper() for p in config.presets]
    cells.sort(key=lambda c: (order.index(c[0]) if c[0] in order else 0,
                              c[1], config.grid.index((c[3], c[4])), config.seeds.index(c[5])))
    for name, npc, ds, L, K, seed in cells:
        ctx = f"{config.experiment} preset={name} npc={npc} grid=({L},{K}) seed={seed}"
        params = BuildParams(L, K, seed)
        t0 = time.perf_counter()
        index = _with_context(lambda: build(ds, params, metric), ctx)
        build_time = time.perf_counter() - t0
        ident: list[float] = []
        report = _with_context(lambda: relocate_and_rebuild(
            index, ds, config.iterations, config.criterion,
            on_iteration=lambda _i, ix: ident.append(ix.exhaustive_error(ds, "identity"))), ctx)
        tree_times = [build_time] + report.build_times
        for it, err in enumerate(report.errors):
            records.append({
                "experiment": config.experiment, "dataset": name, "points_per_cloud": npc,
                "n": len(ds), "length_group": L, "n_centroids": K, "seed": seed,
                "criterion": config.criterion, "iteration": it,
                "tree_depth": report.depths[it], "predicted_depth": predicted_depth(len(ds), L, K),
                "error_rate": err, "identity_error": ident[it],
                "moved": report.moved[it] if it < len(report.moved) else None,
                "tree_time": tree_times[it], "search_time": report.search_times[it],
            })
        if log:
            log(f"{ctx}: errors {[round(e, 4) for e in report.errors]}")
    return records


def run_gauss_bench(config: ExperimentConfig, log=None) -> list[dict]:
    return run_cloud_bench(config, log)


run_size_sweep = run_param_sweep = run_ratio_sweep = run_gauss_bench


def run_bombard(config: ExperimentConfig, log=None) -> tuple[list[dict], list[dict]]:
    """Top-down vs bottom-up centroid bombardment of four t-distributed clouds.

    Returns (coverage records, centroid coordinate records). Coverage is the
    mean and max distance from each point to its nearest centroid.
    """
    metric = as_metric(config.metric)
    coverage, placements = [], []
    npc = config.points_per_cloud[0]

    def cover(X, C):
        d = np.min(np.stack([metric.to_many(c, X) for c in C]), axis=0)
        return float(d.mean()), float(d.max())

    for seed in config.seeds:
        ds = gen_clouds(bombard_spec(npc, seed))
        X = ds.points
        n = len(X)
        for k in config.top_down_k:
            if k > n:
                raise ValueError(f"top-down k={k} exceeds {n} points")
            t0 = time.perf_counter()
            res = kmeans.kmeans_fit(X, k, seed=seed)
            elapsed = time.perf_counter() - t0
            mean, mx = cover(X, res.centroids)
            coverage.append({"experiment": "bombard", "seed": seed, "test": "top_down", "groups": 1,
                             "k_per_group": k, "total_centroids": k, "mean_coverage": mean,
                             "max_coverage": mx, "tree_time": elapsed})
            placements.extend({"seed": seed, "test": "top_down", "total_centroids": k, "group": 0,
                               "centroid": j, "x": float(c[0]), "y": float(c[1])}
                              for j, c in enumerate(res.centroids))
        groups = balanced_chunks(make_rng(seed, 50).permutation(n), config.bottom_up_groups)
        for k in config.bottom_up_k:
            if k > min(len(g) for g in groups):
                raise ValueError(f"bottom-up k={k} exceeds a group's size")
            t0 = time.perf_counter()
            cents = []
            for g, grp in enumerate(groups):
                res = kmeans.fit_batch(X[grp][None], k, make_rng(seed, 51, g, k))[0]
                cents.append(res.centroids)
                placements.extend({"seed": seed, "test": "bottom_up", "total_centroids": k * len(groups),
                                   "group": g, "centroid": j, "x": float(c[0]), "y": float(c[1])}
                                  for j, c in enumerate(res.centroids))
            elapsed = time.perf_counter() - t0
            mean, mx = cover(X, np.vstack(cents))
            coverage.append({"experiment": "bombard", "seed": seed, "test": "bottom_up",
                             "groups": len(groups), "k_per_group": k, "total_centroids": k * len(groups),
                             "mean_coverage": mean, "max_coverage": mx, "tree_time": elapsed})
    return coverage, placements


# -- text ----------------------------------------------------------------

def _corpus_for(config: ExperimentConfig, cats: list[str], seed: int):
    if config.corpus:
        return load_reuters_like(config.corpus, cats)
    return synthetic_corpus(docs_per_class=config.docs_per_class, overlap=config.text_overlap,
                            seed=seed, categories=tuple(cats))


def run_text_bench(config: ExperimentConfig, log=None) -> list[dict]:
    """Indexing and classification error over relocation iterations.

    Per category set, stemming flag, grid pair and seed: one ``iteration``
    record per relocation iteration and one ``best`` record holding the
    lowest classification error (and its iteration) and the lowest indexing
    error (and its iteration).
    """
    metric = as_metric(config.metric)
    records = []
    for cats in config.category_sets:
        tag = "/".join(cats)
        for seed in config.seeds:
            corpus = _corpus_for(config, list(cats), seed)
            for stem in config.stemming:
                tdm = tfidf_encode(corpus, stemming_hook=light_stem if stem else None)
                ds = tdm.to_dataset()
                for L, K in config.grid:
                    ctx = f"text_bench categories={tag} stemming={stem} grid=({L},{K}) seed={seed}"
                    params = BuildParams(L, K, seed)
                    t0 = time.perf_counter()
                    index = _with_context(lambda: build(ds, params, metric), ctx)
                    build_time = time.perf_counter() - t0
                    cls_err, cls_time = [], []

                    def on_iter(_i, ix):
                        t = time.perf_counter()
                        cls_err.append(ix.classification_error(ds, config.rule, leave_one_out=True))
                        cls_time.append(time.perf_counter() - t)

                    report = _with_context(lambda: relocate_and_rebuild(
                        index, ds, config.iterations, config.criterion, on_iteration=on_iter), ctx)
                    tree_times = [build_time] + report.build_times
                    common = {"experiment": "text_bench", "categories": tag, "stemming": bool(stem),
                              "n_docs": tdm.n, "n_terms": len(tdm.terms), "length_group": L,
                              "n_centroids": K, "seed": seed, "rule": config.rule}
                    for it, err in enumerate(report.errors):
                        records.append({**common, "kind": "iteration", "iteration": it,
                                        "tree_depth": report.depths[it], "error_rate": err,
                                        "classification_error": cls_err[it], "best_index_iteration": None,
                                        "tree_time": tree_times[it],
                                        "search_time": report.search_times[it] + cls_time[it]})
                    best_c = int(np.argmin(cls_err))
                    records.append({**common, "kind": "best", "iteration": best_c,
                                    "tree_depth": report.depths[best_c], "error_rate": report.best_error,
                                    "classification_error": cls_err[best_c],
                                    "best_index_iteration": report.best_iteration,
                                    "tree_time": sum(tree_times), "search_time": sum(report.search_times)})
                    if log:
                        log(f"{ctx}: classification {[round(e, 4) for e in cls_err]}")
    return records


# -- cluster -------------------------------------------------------------

def run_cluster_bench(config: ExperimentConfig, log=None) -> list[dict]:
    """Per-node build records plus recall of routed k-NN against epsilon.

    ``recall`` compares with the broadcast (epsilon = inf) answer, which is
    exactly the merge of every node's local answer; ``exact_recall`` compares
    with brute-force k-NN over the whole dataset.
    """
    metric = as_metric(config.metric)
    L, K = config.grid[0]
    records = []
    for seed in config.seeds:
        for name, npc, ds in _cloud_datasets(config, seed):
            parts = partition_dataset(ds, config.nodes, config.assignment_seed)
            bus = MessageBus()
            params = BuildParams(L, K, seed)
            nodes, coord = build_cluster(parts, params, metric, bus=bus)
            base = {"experiment": "cluster_bench", "dataset": name, "points_per_cloud": npc,
                    "n": len(ds), "length_group": L, "n_centroids": K, "seed": seed,
                    "nodes": config.nodes, "assignment_seed": config.assignment_seed}
            for nid, node in nodes.items():
                ix = node.indexes[0]
                records.append({**base, "kind": "node", "node_id": nid, "n_node": node.size,
                                "tree_depth": ix.depth,
                                "predicted_depth": predicted_depth(node.size, L, K),
                                "iteration": 0, "comm_messages": bus.inter_node,
                                "epsilon": None, "recall": None, "exact_recall": None,
                                "mean_nodes_queried": None, "empty_routes": None,
                                "tree_time": node.build_time, "search_time": None})
            qrng = make_rng(seed, 60)
            pick = qrng.choice(len(ds), size=min(config.n_queries, len(ds)), replace=False)
            X = ds.dense_rows(np.arange(len(ds)))
            Q = X[pick] + qrng.normal(scale=0.1, size=(len(pick), ds.dim))
            truth = []
            for q in Q:
                d = metric.to_many(q, X)
                truth.append(set(ds.ids[np.lexsort((ds.ids, d))[:config.k]].tolist()))
            broadcast = [set(cluster_knn(nodes, coord, q, config.k, math.inf).ids) for q in Q]
            for eps in config.epsilons:
                t0 = time.perf_counter()
                res = [cluster_knn(nodes, coord, q, config.k, eps) for q in Q]
                elapsed = time.perf_counter() - t0
                rec = float(np.mean([len(set(r.ids) & b) / max(1, len(b)) for r, b in zip(res, broadcast)]))
                exact = float(np.mean([len(set(r.ids) & t) / len(t) for r, t in zip(res, truth)]))
                records.append({**base, "kind": "epsilon", "node_id": None, "n_node": None,
                                "tree_depth": None, "predicted_depth": None, "iteration": 0,
                                "comm_messages": bus.inter_node, "epsilon": eps, "recall": rec,
                                "exact_recall": exact,
                                "mean_nodes_queried": float(np.mean([len(r.stats.extra["nodes_queried"]) for r in res])),
                                "empty_routes": int(sum(r.stats.extra["empty_route"] for r in res)),
                                "tree_time": None, "search_time": elapsed})
            if log:
                log(f"cluster_bench seed={seed}: inter-node messages during build = {bus.inter_node}")
    return records


RUNNERS = {
    "gauss_bench": run_gauss_bench,
    "size_sweep": run_size_sweep,
    "param_sweep": run_param_sweep,
    "ratio_sweep": run_ratio_sweep,
    "text_bench": run_text_bench,
    "cluster_bench": run_cluster_bench,
}


def run_experiment(config: ExperimentConfig, out=None, log=None) -> list[dict]:
    """Run ``config`` and write its CSV to ``out`` (or ``config.out``) if given.

    The bombard experiment also writes centroid coordinates next to the main
    file as ``<stem>.centroids.csv``.
    """
    out = out or config.out
    if config.experiment == "bombard":
        records, placements = run_bombard(config, log)
        if out:
            p = Path(out)
            write_records(records, config, p)
            write_records(placements, config, p.with_name(p.stem + ".centroids.csv"),
                          experiment="bombard_centroids")
        return records
    records = RUNNERS[config.experiment](config, log)
    for rec in records:
        bad = check_record(rec)
        if bad:
            raise AssertionError(f"invalid record {rec}: {bad}")
    if out:
        write_records(records, config, out)
    return records


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
