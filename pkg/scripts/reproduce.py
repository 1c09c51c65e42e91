"""Run every benchmark experiment with its default configuration.

Writes one CSV per experiment into ``--out`` (default ``results/``). With
``--quick`` the cloud sizes and seed counts shrink so the whole set finishes
in about a minute on one core.

    python3 scripts/reproduce.py --quick
    python3 scripts/reproduce.py --only gauss_bench param_sweep
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from maskindex.experiments import EXPERIMENTS, default_config, run_experiment

QUICK = {
    "gauss_bench": dict(seeds=[0, 1], iterations=4),
    "size_sweep": dict(points_per_cloud=[200, 1000], seeds=[0]),
    "param_sweep": dict(points_per_cloud=[200], seeds=[0]),
    "ratio_sweep": dict(points_per_cloud=[200], seeds=[0]),
    "text_bench": dict(iterations=3),
    "cluster_bench": dict(n_queries=100),
    "bombard": dict(),
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--only", nargs="+", choices=EXPERIMENTS)
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--corpus", help="Reuters-21578 .sgm directory or label<TAB>text file for text_bench")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.only or EXPERIMENTS:
        overrides = dict(QUICK[name]) if args.quick else {}
        if name == "text_bench" and args.corpus:
            overrides.update(corpus=args.corpus, category_sets=[["alum", "barley"], ["ipi", "iron-steel"],
                                                                ["carcass", "cocoa"], ["palm-oil", "pet-chem"],
                                                                ["palm-oil", "barley"]])
        cfg = default_config(name, **overrides)
        t0 = time.perf_counter()
        records = run_experiment(cfg, out / f"{name}.csv")
        print(f"{name}: {len(records)} records in {time.perf_counter() - t0:.1f}s -> {out / (name + '.csv')}",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
