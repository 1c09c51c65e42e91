from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import pdist
from scipy.stats import kurtosis

from maskindex.datasets import (
    CloudSpec,
    UndefinedIntrinsicDimensionality,
    bombard_spec,
    clean_tokens,
    gen_clouds,
    intrinsic_dimensionality,
    light_stem,
    load_reuters_like,
    measured_overlap,
    overlap_preset,
    rho_from_distances,
    ring_means,
    synthetic_corpus,
    tfidf_encode,
    tokenize,
    write_corpus_tsv,
)
from oracles import tfidf_from_counts

# excess kurtosis of Student-t with 12 degrees of freedom: 6 / (12 - 4)
T12_EXCESS_KURTOSIS = 0.75


class TestClouds:
    def test_gno_shape_and_labels(self):
        ds = gen_clouds(overlap_preset("GNO", 200, seed=0))
        assert ds.points.shape == (1600, 2)
        assert np.bincount(ds.labels).tolist() == [200] * 8
        assert measured_overlap(ds, overlap_preset("GNO").center_matrix()) == 0.0

    def test_deterministic(self):
        a = gen_clouds(overlap_preset("GRO", 50, seed=4))
        b = gen_clouds(overlap_preset("GRO", 50, seed=4))
        assert np.array_equal(a.points, b.points) and a.labels == b.labels

    def test_seeds_differ(self):
        a = gen_clouds(overlap_preset("GRO", 50, seed=4))
        b = gen_clouds(overlap_preset("GRO", 50, seed=5))
        assert not np.array_equal(a.points, b.points)

    @pytest.mark.parametrize("seed", range(5))
    def test_overlap_ordering(self, seed):
        ov = [measured_overlap(gen_clouds(overlap_preset(p, seed=seed)), overlap_preset(p).center_matrix())
              for p in ("GNO", "GMO", "GRO")]
        assert ov[0] < ov[1] < ov[2]

    def test_tiny_sigma_collapses_to_means(self):
        means = ((1.0, 2.0), (-3.0, 5.0), (7.0, -1.0))
        spec = CloudSpec(n_clouds=3, points_per_cloud=10, means=means, sigma=1e-30)
        ds = gen_clouds(spec)
        centers = spec.center_matrix()
        np.testing.assert_array_equal(ds.points, centers[np.asarray(ds.labels)])

    def test_ring_spacing(self):
        m = ring_means(8, 10.0)
        gaps = np.linalg.norm(m - np.roll(m, 1, axis=0), axis=1)
        np.testing.assert_allclose(gaps, 10.0, rtol=1e-12)

    def test_student_t_heavier_tails(self):
        spec = bombard_spec(points_per_cloud=25_000, seed=0)
        ds = gen_clouds(spec)
        resid = ds.points - spec.center_matrix()[np.asarray(ds.labels)]
        k = kurtosis(resid, axis=0)
        assert np.all(k > 0)
        assert np.all(np.abs(k - T12_EXCESS_KURTOSIS) < 0.3)
        gauss = CloudSpec(n_clouds=4, points_per_cloud=25_000, means=spec.means, seed=0)
        g = gen_clouds(gauss)
        kg = kurtosis(g.points - gauss.center_matrix()[np.asarray(g.labels)], axis=0)
        assert np.all(k > kg)

    @pytest.mark.parametrize("bad", [dict(sigma=0.0), dict(n_clouds=0), dict(family="cauchy"),
                                     dict(family="student_t", dof=0.0),
                                     dict(n_clouds=2, means=((0.0, 0.0),))])
    def test_invalid_spec(self, bad):
        with pytest.raises(ValueError):
            CloudSpec(**bad)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            overlap_preset("GXO")


class TestTfidf:
    def test_term_in_every_doc_weighs_zero(self):
        m = tfidf_encode([(["x", "y"], 0), (["x"], 1), (["x", "x"], 0)], stop_words=())
        for j in range(3):
            assert m.weight("x", j) == 0.0

    def test_direct_substitution(self):
        m = tfidf_encode([(["x", "x"], 0), (["y"], 1), (["y"], 1), (["y"], 1)], stop_words=())
        assert m.weight("x", 0) == pytest.approx(2 * math.log(4), abs=1e-12)
        assert m.weight("x", 0) == pytest.approx(2.7726, abs=1e-4)

    def test_two_doc_hand_case(self):
        m = tfidf_encode([(tokenize("a b"), 0), (tokenize("a c"), 1)], stop_words=())
        assert m.weight("a", 0) == 0.0 and m.weight("a", 1) == 0.0
        assert m.weight("b", 0) == pytest.approx(math.log(2), abs=1e-12)
        assert m.weight("b", 1) == 0.0

    def test_filtering(self):
        toks = tokenize("The 3 barley-crops, in 1987!")
        assert clean_tokens(toks) == ["barley", "crops"]

    def test_stemming_hook_only_when_given(self):
        corpus = [(["prices", "rising"], 0), (["price"], 1)]
        assert "prices" in tfidf_encode(corpus).terms
        stemmed = tfidf_encode(corpus, stemming_hook=light_stem)
        assert "prices" not in stemmed.terms and "price" in stemmed.terms

    def test_empty_vocabulary(self):
        with pytest.raises(ValueError):
            tfidf_encode([(["the", "and"], 0)])

    def test_recompute_from_counts(self):
        corpus = synthetic_corpus(docs_per_class=15, overlap=0.4, seed=2)
        m = tfidf_encode(corpus, stop_words=())
        want = tfidf_from_counts([list(t) for t, _ in corpus])
        W = m.docs.tocoo()
        got = {(int(j), m.terms[int(i)]): float(v) for j, i, v in zip(W.row, W.col, W.data)}
        for key, w in want.items():
            assert got.get(key, 0.0) == pytest.approx(w, abs=1e-12)
        assert set(got) <= set(want)

    @given(st.lists(st.lists(st.sampled_from(list("abcdefgh")), min_size=1, max_size=12),
                    min_size=1, max_size=10))
    def test_sparsity_and_sign(self, docs):
        m = tfidf_encode([(d, 0) for d in docs], stop_words=())
        assert (m.docs.data >= 0).all() and (m.df >= 1).all()
        for j, d in enumerate(docs):
            assert m.docs[j].nnz <= len(set(d))

    def test_disjoint_vocabularies_share_no_support(self):
        m = tfidf_encode(synthetic_corpus(docs_per_class=30, overlap=0.0, seed=1))
        lab = np.array(m.labels)
        a = set(m.docs[np.flatnonzero(lab == "alpha")].indices.tolist())
        b = set(m.docs[np.flatnonzero(lab == "beta")].indices.tolist())
        assert a and b and not a & b

    def test_overlap_shares_support(self):
        m = tfidf_encode(synthetic_corpus(docs_per_class=30, overlap=0.5, seed=1))
        lab = np.array(m.labels)
        a = set(m.tf[np.flatnonzero(lab == "alpha")].indices.tolist())
        b = set(m.tf[np.flatnonzero(lab == "beta")].indices.tolist())
        assert a & b


class TestLoader:
    @pytest.fixture
    def tsv(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("# label<TAB>text\n"
                     "alum\tAluminium prices rose\n"
                     "barley\tBarley harvest fell\n"
                     "alum,barley\tmixed story\n"
                     "cocoa\tCocoa beans\n")
        return p

    def test_keeps_only_single_category_docs(self, tsv):
        docs = load_reuters_like(tsv, ("alum", "barley"))
        assert [lab for _, lab in docs] == ["alum", "barley"]
        assert docs[0][0] == ["aluminium", "prices", "rose"]

    def test_unknown_category(self, tsv):
        with pytest.raises(KeyError):
            load_reuters_like(tsv, ("alum", "zinc"))

    def test_zero_matches(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("alum,barley\tboth\n")
        with pytest.raises(ValueError, match="no documents"):
            load_reuters_like(p, ("alum", "barley"))

    def test_malformed(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("no tab here\n")
        with pytest.raises(ValueError):
            load_reuters_like(p, ("alum",))

    def test_sgml(self, tmp_path):
        p = tmp_path / "r.sgm"
        p.write_text('<REUTERS NEWID="1"><TOPICS><D>alum</D></TOPICS><TEXT><TITLE>ALUM UP</TITLE>'
                     "<BODY>Prices rose.</BODY></TEXT></REUTERS>\n"
                     '<REUTERS NEWID="2"><TOPICS><D>barley</D></TOPICS><TEXT>'
                     "<BODY>Barley fell.</BODY></TEXT></REUTERS>\n")
        docs = load_reuters_like(p, ("alum", "barley"))
        assert docs == [(["alum", "up", "prices", "rose"], "alum"), (["barley", "fell"], "barley")]

    def test_synthetic_round_trip(self, tmp_path):
        corpus = synthetic_corpus(docs_per_class=5, seed=0)
        write_corpus_tsv(corpus, tmp_path / "s.tsv")
        assert load_reuters_like(tmp_path / "s.tsv", ("alpha", "beta")) == corpus

    def test_missing_path(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_reuters_like(tmp_path / "nope.tsv", ("a", "b"))


class TestIntrinsicDimensionality:
    def test_formula(self):
        # two values 1 -/+ sqrt(0.5): mean 1, variance 0.5
        d = [1 - math.sqrt(0.5), 1 + math.sqrt(0.5)]
        assert rho_from_distances(d) == pytest.approx(1.0, rel=1e-12)

    def test_identical_points(self):
        with pytest.raises(UndefinedIntrinsicDimensionality):
            intrinsic_dimensionality(np.ones((10, 3)))

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            intrinsic_dimensionality(np.ones((1, 3)))

    @pytest.mark.parametrize("seed", range(5))
    def test_hypercube_rho_grows_with_dim(self, seed):
        rng = np.random.default_rng(seed)
        est, exact = [], []
        for d in (2, 8, 32):
            X = rng.random((300, d))
            est.append(intrinsic_dimensionality(X, n_pairs=20_000, seed=seed))
            exact.append(rho_from_distances(pdist(X)))
        assert est[0] < est[1] < est[2]
        assert exact[0] < exact[1] < exact[2]
        np.testing.assert_allclose(est, exact, rtol=0.15)
