"""Command-line interface: ``mask <subcommand> ...``.

Every failure prints exactly one line ``error: <kind>: <message>`` on stderr
and exits nonzero: 1 for runtime errors, 2 for bad arguments (kind
``UsageError``).
Query and insert results are printed as JSON lines on stdout.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import SparseVector
from .datasets import gen_clouds, overlap_preset, synthetic_corpus, tfidf_encode, write_corpus_tsv
from .distributed import Topology
from .experiments import EXPERIMENTS, ExperimentConfig, default_config, render_csv, run_experiment
from .index import BuildParams, build
from .io import load_index, read_dataset, save_index, write_dense, write_manifest, write_sparse


def _parse_vector(text: str, dim: int):
    """``"1.0,2.5"`` (dense) or ``"3:0.5 7:1.0"`` (sparse, given ``dim``)."""
    text = text.strip()
    if ":" in text:
        pairs = []
        for tok in text.replace(",", " ").split():
            i, v = tok.split(":", 1)
            pairs.append((int(i), float(v)))
        return SparseVector.from_pairs(pairs, dim)
    return np.array([float(x) for x in text.split(",")], dtype=np.float64)


def _grid(text: Optional[str]):
    """``"10:5,30:15"`` -> [(10, 5), (30, 15)]."""
    if not text:
        return None
    out = []
    for tok in text.split(","):
        L, K = tok.split(":")
        out.append((int(L), int(K)))
    return out


def _ints(text: Optional[str]):
    return None if not text else [int(x) for x in text.split(",")]


def _floats(text: Optional[str]):
    return None if not text else [math.inf if x.strip() == "inf" else float(x) for x in text.split(",")]


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- subcommands ---------------------------------------------------------

def cmd_gen(args) -> int:
    out = Path(args.out)
    if args.kind == "clouds":
        spec = overlap_preset(args.preset, args.points_per_cloud, args.seed, args.n_clouds)
        ds = gen_clouds(spec)
        write_dense(ds, out)
        manifest = {"kind": "clouds", "preset": args.preset.upper(), "spec": spec.to_dict(),
                    "seed": args.seed, "format": "mask-dense v1"}
    else:
        cats = args.categories.split(",")
        corpus = synthetic_corpus(docs_per_class=args.docs_per_class, overlap=args.overlap,
                                  seed=args.seed, categories=cats)
        if args.raw:
            write_corpus_tsv(corpus, out)
            fmt = "label<TAB>text"
        else:
            write_sparse(tfidf_encode(corpus).to_dataset(), out)
            fmt = "mask-sparse v1"
        manifest = {"kind": "corpus", "categories": cats, "docs_per_class": args.docs_per_class,
                    "overlap": args.overlap, "seed": args.seed, "format": fmt}
    mpath = write_manifest(out, manifest)
    _emit({"written": str(out), "manifest": str(mpath)})
    return 0


def cmd_build(args) -> int:
    ds = read_dataset(args.data)
    params = BuildParams(args.length_group, args.n_centroids, args.seed)
    index = build(ds, params, args.metric)
    save_index(index, args.out)
    _emit({"written": args.out, "n": len(index), "depth": index.depth,
           "partitions": len(index.partitions)})
    return 0


def cmd_query(args) -> int:
    index = load_index(args.index)
    vectors = []
    if args.vector:
        vectors.append(_parse_vector(args.vector, index.dim))
    if args.queries:
        qs = read_dataset(args.queries)
        vectors.extend(qs.point(i) for i in range(len(qs)))
    if not vectors:
        raise ValueError("give --vector or --queries")
    for q in vectors:
        if args.range is not None:
            res = index.range_query(q, args.range, args.mode)
            kind = "range"
        elif args.knn is not None:
            res = index.knn_query(q, args.knn)
            kind = "knn"
        else:
            found, res = index.point_query(q)
            kind = "point"
        out = {"kind": kind, "ids": res.ids, "distances": res.distances,
               "distance_count": res.stats.distance_count, "partitions": res.stats.partitions,
               "truncated": res.stats.truncated}
        if kind == "point":
            out["found"] = found
            out.pop("ids")
            out.pop("distances")
        _emit(out)
    return 0


def cmd_insert(args) -> int:
    index = load_index(args.index)
    label = args.label
    if label is not None:
        try:
            label = int(label)
        except ValueError:
            pass
    part = index.insert(_parse_vector(args.vector, index.dim), args.id, label)
    out = args.out or args.index
    save_index(index, out)
    _emit({"inserted": args.id, "partition": part, "written": out})
    return 0


def _bench_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if args.experiment and args.experiment != cfg.experiment:
            raise ValueError(f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        d = cfg.to_dict()
    else:
        d = default_config(args.experiment).to_dict()
    overrides = {
        "seeds": [args.seed] if args.seed is not None else _ints(args.seeds),
        "iterations": args.iterations,
        "metric": args.metric,
        "presets": args.presets.split(",") if args.presets else None,
        "points_per_cloud": _ints(args.points_per_cloud),
        "data": args.data,
        "corpus": args.corpus,
        "category_sets": [c.split("/") for c in args.categories.split(",")] if args.categories else None,
        "criterion": args.criterion,
        "rule": args.rule,
        "epsilons": [args.epsilon] if args.epsilon is not None else _floats(args.epsilons),
        "out": args.out,
    }
    grid = _grid(args.grid)
    if grid is None and (args.length_group or args.n_centroids):
        if not (args.length_group and args.n_centroids):
            raise ValueError("--length-group and --n-centroids go together")
        grid = [(args.length_group, args.n_centroids)]
    overrides["grid"] = grid
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(d)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_bench(args) -> int:
    return _run_bench(_bench_config(args), args)


def cmd_cluster(args) -> int:
    args.experiment = "cluster_bench"
    cfg = _bench_config(args)
    topo = Topology.load(args.topology) if args.topology else Topology()
    d = cfg.to_dict()
    d["nodes"] = args.nodes if args.nodes is not None else topo.nodes
    d["assignment_seed"] = topo.assignment_seed
    if args.epsilon is None and topo.epsilon is not None:
        d["epsilons"] = [topo.epsilon]
    return _run_bench(ExperimentConfig.from_dict(d), args)


def _run_bench(cfg: ExperimentConfig, args) -> int:
    records = run_experiment(cfg, log=_log if args.verbose else None)
    if not cfg.out:
        sys.stdout.write(render_csv(records, cfg))
    else:
        _emit({"written": cfg.out, "records": len(records), "config_hash": cfg.config_hash()})
    return 0


# -- parser --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Argument errors in the same one-line format as runtime errors."""

    def error(self, message):
        msg = " ".join(message.split())
        self.exit(2, f"error: UsageError: {self.prog}: {msg}\n")


def _add_build_flags(p, required=True):
    p.add_argument("--length-group", type=int, required=required)
    p.add_argument("--n-centroids", type=int, required=required)


def _add_bench_flags(p):
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    _add_build_flags(p, required=False)
    p.add_argument("--grid", help="comma list of length_group:n_centroids pairs")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma list of seeds")
    p.add_argument("--iterations", type=int)
    p.add_argument("--metric", choices=["l1", "l2", "linf"])
    p.add_argument("--presets", help="comma list of GNO,GMO,GRO")
    p.add_argument("--points-per-cloud", help="comma list of cloud sizes")
    p.add_argument("--data", help="dataset file instead of generated clouds")
    p.add_argument("--corpus", help="Reuters .sgm file/directory or label<TAB>text file")
    p.add_argument("--categories", help="comma list of slash-joined category sets, e.g. alum/barley")
    p.add_argument("--criterion", choices=["label", "identity"])
    p.add_argument("--rule", choices=["nn1", "partition_majority"])
    p.add_argument("--epsilon", type=float, help="routing threshold (strict <)")
    p.add_argument("--epsilons", help="comma list of routing thresholds; 'inf' broadcasts")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mask", description="Multilevel k-means similarity index.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a cloud dataset or a synthetic corpus")
    p.add_argument("kind", choices=["clouds", "corpus"])
    p.add_argument("--preset", default="GNO", help="GNO, GMO or GRO")
    p.add_argument("--points-per-cloud", type=int, default=200)
    p.add_argument("--n-clouds", type=int, default=8)
    p.add_argument("--categories", default="alpha,beta")
    p.add_argument("--docs-per-class", type=int, default=60)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--raw", action="store_true", help="write corpus text instead of TF-IDF vectors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build an index from a dataset file")
    p.add_argument("--data", required=True)
    _add_build_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=["l1", "l2", "linf"], default="l2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="point, k-NN or range query against a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--vector", help="'x1,x2,...' or sparse 'i:v i:v ...'")
    p.add_argument("--queries", help="dataset file of query points")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--point", action="store_true", help="exact-match lookup (default)")
    g.add_argument("--knn", type=int, metavar="K")
    g.add_argument("--range", type=float, metavar="RADIUS")
    p.add_argument("--mode", choices=["paper_faithful", "cover_expanded"], default="paper_faithful")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("insert", help="insert one element into a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--vector", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--label")
    p.add_argument("--out", help="defaults to overwriting --index")
    p.set_defaults(func=cmd_insert)

    p = sub.add_parser("bench", help="run a benchmark experiment")
    p.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    _add_bench_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("cluster", help="simulate a multi-node deployment")
    p.add_argument("--topology", help="JSON file with nodes, assignment_seed, epsilon")
    p.add_argument("--nodes", type=int)
    _add_bench_flags(p)
    p.set_defaults(func=cmd_cluster)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "bench" and not args.experiment and not args.config:
        parser.error("bench needs an experiment name or --config")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        msg = " ".join(str(exc).split()) or repr(exc)
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
