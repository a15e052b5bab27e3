import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import RAW, random_docs, raw_tokens
from qaprf.corpus import Query, build_corpus
from qaprf.stat_rank import (
    MAGIC,
    QueryTerms,
    RankerModel,
    TermPairBatch,
    batch_loss,
    build_candidate_set,
    doc_tf_feature,
    feature_matrix,
    feature_vector,
    gradient_check,
    idf_feature,
    make_batch,
    pairwise_loss,
    pairwise_loss_value,
    ranker_forward,
    step,
    train_ranker,
    valid_pairs,
    w_prf,
)


def brute_features(w, q_terms, fb_tokens, all_tokens, alpha):
    n_docs = len(all_tokens)
    avg = sum(len(d) for d in all_tokens) / n_docs
    df = sum(1 for d in all_tokens if w in d)
    fv = [q_terms.count(w) / len(q_terms), max(0.0, math.log(n_docs / (df + 1)))]
    for d in fb_tokens:
        tf = d.count(w)
        fv.append(tf * math.log(1 + alpha * avg / len(d)) if tf else 0.0)
    return fv


def separable_toy(n_queries=3, n_rel=4, n_irr=6, dim=5, seed=0):
    rng = np.random.default_rng(seed)
    data = []
    for qi in range(n_queries):
        terms = [f"r{qi}_{i}" for i in range(n_rel)] + [f"i{qi}_{i}" for i in range(n_irr)]
        x = np.zeros((len(terms), dim))
        x[:n_rel, 0] = 1.0
        x[n_rel:, 1] = 1.0
        deltas = np.concatenate([rng.uniform(0.1, 0.3, n_rel), rng.uniform(-0.05, 0.05, n_irr)])
        data.append(QueryTerms(f"q{qi}", terms, x, deltas))
    return data


class TestFeatures:
    def test_single_term_query(self, toy_corpus):
        fv = feature_vector("apple", Query("q", ("apple",)), [], toy_corpus.vocab)
        assert fv[0] == 1.0 and fv.shape == (2,)

    def test_idf_worked_value(self):
        assert idf_feature(100, 9) == pytest.approx(math.log(10), abs=1e-9)
        assert idf_feature(100, 9) == pytest.approx(2.302585, abs=1e-6)

    def test_doc_tf_worked_value(self):
        assert doc_tf_feature(3, 50, 50.0, 1.0) == pytest.approx(3 * math.log(2), abs=1e-9)
        assert doc_tf_feature(3, 50, 50.0, 1.0) == pytest.approx(2.079442, abs=1e-6)

    def test_idf_floor_for_ubiquitous_term(self):
        assert idf_feature(10, 10) == 0.0

    def test_idf_strictly_decreasing(self):
        vals = [idf_feature(1000, c) for c in range(0, 999)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_query_feature_zero_iff_absent(self, toy_corpus):
        q = Query("q", ("apple", "fig"))
        assert feature_vector("banana", q, [], toy_corpus.vocab)[0] == 0.0
        assert feature_vector("fig", q, [], toy_corpus.vocab)[0] == 0.5

    def test_missing_feedback_slots_are_zero(self, toy_corpus):
        fv = feature_vector("apple", Query("q", ("apple",)), [toy_corpus.get("a")], toy_corpus.vocab, m=3)
        assert fv.shape == (5,) and fv[3] == 0.0 and fv[4] == 0.0 and fv[2] > 0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 300), st.floats(0.1, 3.0))
    def test_matches_raw_recount(self, seed, n_docs, alpha):
        rng = np.random.default_rng(seed)
        docs = random_docs(rng, n_docs)
        corpus = build_corpus(docs, RAW)
        toks = raw_tokens(docs)
        fb_idx = sorted(rng.choice(n_docs, size=min(5, n_docs), replace=False).tolist())
        fb = [corpus.documents[i] for i in fb_idx]
        q_terms = list(rng.choice(toks[fb_idx[0]], size=2))
        q = Query("q", tuple(q_terms))
        terms = build_candidate_set(fb, corpus.vocab) + ["absent"]
        mat = feature_matrix(terms, q, fb, corpus.vocab, alpha)
        for row, w in zip(mat, terms):
            expected = brute_features(w, q_terms, [toks[i] for i in fb_idx], toks, alpha)
            assert np.allclose(row, expected, rtol=1e-12, atol=0)
            assert np.allclose(feature_vector(w, q, fb, corpus.vocab, alpha), expected, rtol=1e-12, atol=0)


class TestCandidates:
    def test_identical_documents(self):
        c = build_corpus([("a", "x y y"), ("b", "x y y")], RAW)
        assert build_candidate_set(list(c), c.vocab) == ["x", "y"]

    def test_disjoint_union(self):
        c = build_corpus([("a", "a b c"), ("b", "d e f g")], RAW)
        assert len(build_candidate_set(list(c), c.vocab)) == 7

    def test_empty(self, toy_corpus):
        assert build_candidate_set([], toy_corpus.vocab) == []


class TestForward:
    def test_zero_model(self):
        assert ranker_forward(RankerModel.zeros(4, 3), np.ones(4)) == 0.5

    def test_large_output_bias(self):
        m = RankerModel.zeros(3, 2)
        m.params["b2"].data[:] = 20.0
        assert ranker_forward(m, np.array([1.0, -2.0, 0.5])) > 0.9999

    def test_monotone_in_output_bias(self):
        m = RankerModel.initialize(3, 4, seed=1)
        x = np.array([0.3, 1.0, -0.2])
        outs = []
        for b in np.linspace(-5, 5, 11):
            m.params["b2"].data[:] = b
            outs.append(ranker_forward(m, x))
        assert all(a < b for a, b in zip(outs, outs[1:]))

    def test_hand_set_two_by_two(self):
        m = RankerModel([[1.0, -1.0], [0.5, 2.0]], [0.1, -3.0], [1.5, -0.5], [0.2])
        x = [2.0, 1.0]
        h = [max(0.0, 1.0 * 2 - 1.0 * 1 + 0.1), max(0.0, 0.5 * 2 + 2.0 * 1 - 3.0)]
        z = 1.5 * h[0] - 0.5 * h[1] + 0.2
        assert ranker_forward(m, np.array(x)) == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=4, max_size=4), st.integers(0, 100))
    def test_output_in_open_unit_interval(self, x, seed):
        p = ranker_forward(RankerModel.initialize(4, 3, seed=seed), np.array(x))
        assert 0.0 <= p <= 1.0


class TestPairwiseLoss:
    def test_equal_deltas(self):
        assert pairwise_loss_value(0.3, 0.3, 0.9, 0.1) == 0.0

    def test_equal_probabilities(self):
        assert pairwise_loss_value(0.5, 0.2, 0.4, 0.4) == pytest.approx(0.3 * math.log(2), abs=1e-15)

    def test_worked_value(self):
        v = pairwise_loss_value(0.3, 0.1, 1.0, 0.0, sigma=1.0)
        assert v == pytest.approx(0.2 * math.log(1 + math.exp(-1)), abs=1e-15)
        assert v == pytest.approx(0.062652, abs=1e-6)

    def test_model_wrapper(self):
        m = RankerModel.zeros(3, 2)
        assert pairwise_loss(m, np.ones(3), np.zeros(3), 0.4, 0.1) == pytest.approx(0.3 * math.log(2), abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 0.5))
    def test_non_negative_and_decreasing(self, di, dj, pi, pj, bump):
        v = pairwise_loss_value(di, dj, pi, pj)
        assert v >= 0.0
        if di != dj and pi + bump <= 1.0:
            assert pairwise_loss_value(di, dj, pi + bump, pj) < v


class TestTraining:
    def test_zero_epochs(self):
        m = RankerModel.initialize(5, 4, seed=0)
        trained, trace = train_ranker(m, separable_toy(), 4, epochs=0)
        assert trace == []
        for k in m.params:
            assert np.array_equal(trained.params[k].data, m.params[k].data)

    def test_equal_deltas_give_no_updates(self):
        data = separable_toy()
        for qt in data:
            qt.deltas[:] = 0.1
        m = RankerModel.initialize(5, 4, seed=0)
        trained, trace = train_ranker(m, data, 4, epochs=20)
        assert trace == [0.0] * 20
        for k in m.params:
            assert np.array_equal(trained.params[k].data, m.params[k].data)

    def test_pairs_respect_delta_order(self):
        for qt in separable_toy():
            for i, j in valid_pairs(qt, 4):
                assert qt.deltas[i] > qt.deltas[j]

    def test_separable_toy(self):
        data = separable_toy()
        trained, _ = train_ranker(RankerModel.initialize(5, 32, seed=0), data, 4, epochs=200)
        for qt in data:
            scores = trained.predict(qt.features)
            assert scores[:4].min() > scores[4:].max()

    def test_pair_order_does_not_matter(self):
        data = separable_toy()
        pools = {qi: valid_pairs(qt, 4) for qi, qt in enumerate(data)}
        rng = np.random.default_rng(9)
        shuffled = {qi: p[rng.permutation(p.shape[0])] for qi, p in reversed(list(pools.items()))}
        a, b = RankerModel.initialize(5, 8, seed=3), RankerModel.initialize(5, 8, seed=3)
        for _ in range(5):
            step(a, make_batch(data, pools), 0.05, 5.0)
            step(b, make_batch(data, shuffled), 0.05, 5.0)
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)

    def test_deterministic(self):
        data = separable_toy()
        a, ta = train_ranker(RankerModel.initialize(5, 8, seed=1), data, 4, epochs=10, seed=4)
        b, tb = train_ranker(RankerModel.initialize(5, 8, seed=1), data, 4, epochs=10, seed=4)
        assert ta == tb
        for k in a.params:
            assert np.array_equal(a.params[k].data, b.params[k].data)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gradient_check(self, seed):
        data = separable_toy(seed=seed)
        rng = np.random.default_rng(seed)
        for qt in data:
            qt.features = qt.features + rng.normal(0, 0.5, size=qt.features.shape)
        batch = make_batch(data, {qi: valid_pairs(qt, 4) for qi, qt in enumerate(data)})
        err, per = gradient_check(RankerModel.initialize(5, 6, seed=seed), batch)
        assert err < 1e-4, per

    def test_batch_loss_matches_scalar_loss(self):
        data = separable_toy()
        m = RankerModel.initialize(5, 4, seed=2)
        pairs = valid_pairs(data[0], 4)
        batch = make_batch(data, {0: pairs})
        total = sum(
            pairwise_loss(m, data[0].features[i], data[0].features[j], data[0].deltas[i], data[0].deltas[j]) for i, j in pairs
        )
        assert float(batch_loss(m, batch).data) == pytest.approx(total, rel=1e-12)


class TestWPRF:
    def test_zero_model_scores_half(self, toy_corpus):
        fb = [toy_corpus.get("a"), toy_corpus.get("b")]
        cands = build_candidate_set(fb, toy_corpus.vocab)
        w = w_prf(RankerModel.zeros(4, 3), cands, Query("q", ("apple",)), fb, toy_corpus.vocab)
        assert w == {t: 0.5 for t in cands}

    def test_identical_features_identical_scores(self):
        c = build_corpus([("a", "x y z"), ("b", "x y w")], RAW)
        fb = list(c)
        w = w_prf(RankerModel.initialize(4, 5, seed=0), ["x", "y"], Query("q", ("z",)), fb, c.vocab)
        assert w["x"] == w["y"]

    def test_empty_candidates(self, toy_corpus):
        assert w_prf(RankerModel.zeros(4), [], Query("q", ("apple",)), [], toy_corpus.vocab) == {}


def test_checkpoint_round_trip(tmp_path):
    m = RankerModel.initialize(7, 5, seed=3, sigma=1.5)
    p = tmp_path / "lmb.txt"
    m.save(p)
    assert p.read_text(encoding="utf-8").startswith(MAGIC + "\n")
    back = RankerModel.load(p)
    assert back.sigma == 1.5
    for k in m.params:
        assert np.array_equal(back.params[k].data, m.params[k].data)
