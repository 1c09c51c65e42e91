"""Summarize bench CSVs as percentage tables.

    python3 scripts/tables.py results/gauss_bench.csv
    python3 scripts/tables.py results/*.csv

Cloud benches: mean error per (dataset, grid, iteration) over seeds, plus
depth and mean tree time. Text bench: best classification and indexing error
per category set and stemming flag. Cluster bench: recall against epsilon.
Bombard: mean coverage per test and centroid count.
"""

from __future__ import annotations

import argparse
from collections import defaultdict

import numpy as np

from maskindex.experiments import read_records


def _mean(rows, col):
    vals = [float(r[col]) for r in rows if r.get(col) not in (None, "")]
    return float(np.mean(vals)) if vals else float("nan")


def cloud_table(rows):
    groups = defaultdict(list)
    for r in rows:
        groups[(r["dataset"], r["points_per_cloud"], r["length_group"], r["n_centroids"], r["iteration"])].append(r)
    print(f"{'dataset':<8}{'npc':>7}{'L':>5}{'K':>5}{'iter':>6}{'depth':>7}{'error%':>9}{'ident%':>9}{'tree s':>9}")
    for key in sorted(groups, key=lambda k: (k[0], int(k[1]), int(k[2]), int(k[4]))):
        g = groups[key]
        print(f"{key[0]:<8}{key[1]:>7}{key[2]:>5}{key[3]:>5}{key[4]:>6}{g[0]['tree_depth']:>7}"
              f"{100 * _mean(g, 'error_rate'):>9.2f}{100 * _mean(g, 'identity_error'):>9.2f}"
              f"{_mean(g, 'tree_time'):>9.3f}")


def text_table(rows):
    print(f"{'categories':<22}{'stem':>5}{'L':>4}{'K':>4}{'best cls it':>12}{'cls%':>8}{'best idx it':>12}{'idx%':>8}")
    for r in rows:
        if r["kind"] != "best":
            continue
        print(f"{r['categories']:<22}{r['stemming']:>5}{r['length_group']:>4}{r['n_centroids']:>4}"
              f"{r['iteration']:>12}{100 * float(r['classification_error']):>8.2f}"
              f"{r['best_index_iteration']:>12}{100 * float(r['error_rate']):>8.2f}")


def cluster_table(rows):
    print(f"{'epsilon':>9}{'recall':>9}{'exact':>9}{'nodes/q':>9}{'empty':>7}")
    for r in rows:
        if r["kind"] == "epsilon":
            print(f"{r['epsilon']:>9}{float(r['recall']):>9.3f}{float(r['exact_recall']):>9.3f}"
                  f"{float(r['mean_nodes_queried']):>9.2f}{r['empty_routes']:>7}")
    comm = {r["comm_messages"] for r in rows}
    print(f"inter-node messages during build: {sorted(comm)}")


def bombard_table(rows):
    print(f"{'test':<10}{'centroids':>10}{'mean cov':>10}{'max cov':>10}")
    for r in rows:
        print(f"{r['test']:<10}{r['total_centroids']:>10}{float(r['mean_coverage']):>10.3f}"
              f"{float(r['max_coverage']):>10.3f}")


def main(paths) -> int:
    for path in paths:
        header, rows = read_records(path)
        exp = header["experiment"]
        print(f"== {path} ({exp}, config {header['config_hash']})")
        if exp == "text_bench":
            text_table(rows)
        elif exp == "cluster_bench":
            cluster_table(rows)
        elif exp == "bombard":
            bombard_table(rows)
        elif exp == "bombard_centroids":
            print(f"{len(rows)} centroid placements")
        else:
            cloud_table(rows)
        print()
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Summarize bench CSVs as tables.")
    parser.add_argument("paths", nargs="+", help="bench CSV files")
    raise SystemExit(main(parser.parse_args().paths))
