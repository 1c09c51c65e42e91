from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest

from maskindex.core import make_rng
from maskindex.datasets import bombard_spec, gen_clouds, overlap_preset
from maskindex.experiments import (
    CSV_MAGIC,
    REFERENCE_GRID,
    TIMING_COLUMNS,
    ExperimentConfig,
    check_record,
    default_config,
    read_records,
    render_csv,
    run_bombard,
    run_cluster_bench,
    run_experiment,
    run_text_bench,
)
from maskindex.index import BuildParams, build
from maskindex.io import write_dense
from oracles import depth_recurrence


def strip_timing(text: str) -> str:
    lines = text.splitlines()
    rows = list(csv.reader(lines[1:]))
    keep = [i for i, c in enumerate(rows[0]) if c not in TIMING_COLUMNS]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    for r in rows:
        w.writerow([r[i] for i in keep])
    return lines[0] + "\n" + out.getvalue()


class TestConfig:
    @pytest.mark.parametrize("grid", [[(8, 8)], [(8, 9)], [(0, 1)]])
    def test_grid_needs_fewer_centroids_than_group(self, grid):
        with pytest.raises(ValueError):
            ExperimentConfig("gauss_bench", grid=grid)

    @pytest.mark.parametrize("bad", [dict(experiment="nope"), dict(seeds=[]), dict(seeds=[-1]),
                                     dict(presets=["GXO"]), dict(criterion="x"), dict(rule="x"),
                                     dict(metric="cosine"), dict(iterations=-1), dict(epsilons=[-1.0])])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            ExperimentConfig(**{"experiment": "gauss_bench", **bad})

    def test_json_round_trip(self, tmp_path):
        cfg = default_config("cluster_bench", out="x.csv")
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        back = ExperimentConfig.load(p)
        assert back == cfg and back.config_hash() == cfg.config_hash()
        assert math.isinf(back.epsilons[-1])

    def test_hash_ignores_output_path(self):
        assert default_config("bombard", out="a").config_hash() == default_config("bombard", out="b").config_hash()
        assert default_config("bombard").config_hash() != default_config("bombard", seeds=[1]).config_hash()

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_dict({"experiment": "bombard", "colour": 1})

    def test_param_sweep_defaults_use_reference_grid(self):
        assert default_config("param_sweep").grid == REFERENCE_GRID


class TestRecords:
    def test_check_record(self):
        assert check_record({"tree_time": 0.1, "error_rate": 0.2, "iteration": 0,
                             "tree_depth": 3, "predicted_depth": 3}) == []
        assert check_record({"tree_time": -1.0}) == ["tree_time is negative"]
        assert check_record({"error_rate": 1.5})
        assert check_record({"iteration": 0, "tree_depth": 2, "predicted_depth": 3})

    def test_timing_columns_last(self):
        cfg = default_config("gauss_bench")
        text = render_csv([{"tree_time": 1.0, "a": 1, "search_time": 2.0, "b": 0.5}], cfg)
        assert text.splitlines()[0].startswith(f"{CSV_MAGIC} experiment=gauss_bench config_hash=")
        assert text.splitlines()[1] == "a,b,tree_time,search_time"


class TestCloudBench:
    def test_rerun_is_byte_identical_without_timings(self, tmp_path):
        cfg = default_config("gauss_bench", presets=["GMO"], points_per_cloud=[40], seeds=[0, 1],
                             iterations=2)
        run_experiment(cfg, tmp_path / "a.csv")
        run_experiment(cfg, tmp_path / "b.csv")
        a, b = (tmp_path / "a.csv").read_text(), (tmp_path / "b.csv").read_text()
        assert strip_timing(a) == strip_timing(b)

    def test_records_shape(self):
        cfg = default_config("gauss_bench", presets=["GRO"], points_per_cloud=[50], seeds=[0],
                             iterations=3)
        recs = run_experiment(cfg)
        assert [r["iteration"] for r in recs] == [0, 1, 2, 3]
        assert all(r["tree_time"] >= 0 and r["search_time"] >= 0 for r in recs)
        assert all(not check_record(r) for r in recs)

    def test_param_sweep_depths_follow_recurrence(self):
        cfg = default_config("param_sweep", points_per_cloud=[1000], seeds=[0])
        cfg.grid = [(10, 5), (50, 25)]
        recs = run_experiment(cfg)
        for r in recs:
            assert r["tree_depth"] == depth_recurrence(8000, r["length_group"], r["n_centroids"])

    def test_size_sweep_tree_time_grows(self):
        cfg = default_config("size_sweep", presets=["GNO"], points_per_cloud=[200, 2000], seeds=[0])
        recs = run_experiment(cfg)
        t = {r["points_per_cloud"]: r["tree_time"] for r in recs}
        assert t[2000] > t[200]

    def test_external_data_file(self, tmp_path, gno):
        write_dense(gno, tmp_path / "g.csv")
        cfg = default_config("gauss_bench", data=str(tmp_path / "g.csv"), seeds=[0], iterations=0)
        recs = run_experiment(cfg)
        assert recs[0]["dataset"] == "g.csv" and recs[0]["n"] == 1600


@pytest.fixture(scope="module")
def bombard_result():
    return run_bombard(default_config("bombard"))


class TestBombard:
    def test_more_centroids_cover_better(self, bombard_result):
        cov, _ = bombard_result
        td = {r["total_centroids"]: r["mean_coverage"] for r in cov if r["test"] == "top_down"}
        assert td[128] < td[4]

    def test_bottom_up_comparable_to_top_down(self, bombard_result):
        cov, _ = bombard_result
        td = next(r for r in cov if r["test"] == "top_down" and r["total_centroids"] == 32)
        bu = next(r for r in cov if r["test"] == "bottom_up" and r["total_centroids"] == 32)
        ratio = bu["mean_coverage"] / td["mean_coverage"]
        assert 0.5 <= ratio <= 2.0

    def test_coverage_recomputed_from_placements(self, bombard_result):
        cov, pl = bombard_result
        X = gen_clouds(bombard_spec(250, 0)).points
        for rec in cov:
            C = np.array([[p["x"], p["y"]] for p in pl
                          if p["test"] == rec["test"] and p["total_centroids"] == rec["total_centroids"]])
            d = np.sqrt(((X[:, None, :] - C[None]) ** 2).sum(axis=2)).min(axis=1)
            assert rec["mean_coverage"] == pytest.approx(d.mean(), rel=1e-9)
            assert rec["max_coverage"] == pytest.approx(d.max(), rel=1e-9)

    def test_single_top_down_centroid_is_mean(self):
        cfg = default_config("bombard", top_down_k=[1], bottom_up_k=[1])
        _, pl = run_bombard(cfg)
        X = gen_clouds(bombard_spec(250, 0)).points
        c = next(p for p in pl if p["test"] == "top_down")
        np.testing.assert_allclose([c["x"], c["y"]], X.mean(axis=0), rtol=1e-12, atol=1e-12)

    def test_writes_placements_file(self, tmp_path):
        cfg = default_config("bombard", top_down_k=[4], bottom_up_k=[1])
        run_experiment(cfg, tmp_path / "b.csv")
        header, rows = read_records(tmp_path / "b.centroids.csv")
        assert header["experiment"] == "bombard_centroids" and len(rows) == 4 + 4


class TestTextBench:
    def test_disjoint_pair_zero_error_at_first_build(self):
        cfg = default_config("text_bench", iterations=2, stemming=[False])
        recs = run_text_bench(cfg)
        first = next(r for r in recs if r["kind"] == "iteration" and r["iteration"] == 0)
        assert first["classification_error"] == 0.0
        best = [r for r in recs if r["kind"] == "best"]
        assert len(best) == 1 and best[0]["classification_error"] == 0.0

    def test_majority_rule(self):
        cfg = default_config("text_bench", iterations=0, stemming=[False], rule="partition_majority")
        assert run_text_bench(cfg)[0]["classification_error"] == 0.0

    def test_three_category_error_non_increasing_over_grid(self):
        grid = [(8, 4), (16, 8), (30, 15), (60, 30)]
        cfg = default_config("text_bench", iterations=0, stemming=[False], seeds=[0, 1, 2], grid=grid,
                             text_overlap=0.3, category_sets=[["jobs", "iron-steel", "cotton"]])
        recs = [r for r in run_text_bench(cfg) if r["kind"] == "iteration"]
        mean = [np.mean([r["classification_error"] for r in recs if r["length_group"] == L]) for L, _ in grid]
        assert all(b <= a for a, b in zip(mean, mean[1:]))

    def test_overlap_makes_it_harder(self):
        cfg = default_config("text_bench", iterations=0, stemming=[False], text_overlap=0.8)
        assert run_text_bench(cfg)[0]["classification_error"] > 0.0


class TestClusterBench:
    def test_zero_communication_and_broadcast_recall(self):
        cfg = default_config("cluster_bench", points_per_cloud=[50], n_queries=40)
        recs = run_cluster_bench(cfg)
        assert all(r["comm_messages"] == 0 for r in recs)
        assert {r["node_id"] for r in recs if r["kind"] == "node"} == {0, 1, 2, 3}
        inf = next(r for r in recs if r["kind"] == "epsilon" and math.isinf(r["epsilon"]))
        assert inf["recall"] == 1.0

    def test_one_node_matches_plain_index(self):
        cfg = default_config("cluster_bench", points_per_cloud=[50], n_queries=30, nodes=1,
                             epsilons=[math.inf])
        recs = run_cluster_bench(cfg)
        node = next(r for r in recs if r["kind"] == "node")
        assert node["n_node"] == 400 and node["tree_depth"] == node["predicted_depth"]
        # the same queries against a plain single index
        ds = gen_clouds(overlap_preset("GNO", 50, 0))
        index = build(ds, BuildParams(16, 8, 0))
        qrng = make_rng(0, 60)
        pick = qrng.choice(len(ds), size=30, replace=False)
        Q = ds.points[pick] + qrng.normal(scale=0.1, size=(30, 2))
        hits = []
        for q in Q:
            d = np.sqrt(((ds.points - q) ** 2).sum(axis=1))
            hits.append(index.knn_query(q, 1).ids[0] == int(np.argmin(d)))
        eps = next(r for r in recs if r["kind"] == "epsilon")
        assert eps["exact_recall"] == pytest.approx(np.mean(hits), abs=1e-12)
