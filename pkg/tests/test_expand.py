from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import RAW, random_docs, raw_tokens
from qaprf import synth
from qaprf.corpus import Query, build_corpus
from qaprf.embed import EmbeddingTable
from qaprf.expand import (
    REPORT_HEADER,
    ExpansionConfig,
    LabelError,
    LabelTable,
    Pipeline,
    TrainOptions,
    best_term,
    delta_ndcg,
    delta_ndcg_reference,
    expand_and_retrieve,
    feedback_documents,
    generate_labels,
    interpolate,
    pointer_examples,
    select_terms,
    train_models,
    update_query,
    write_report,
)
from qaprf.index import InvertedIndex, retrieve


def brute_delta(docs, q_terms, w, qrels, beta, depth):
    toks = raw_tokens(docs)
    ids = [d for d, _ in docs]
    n = len(q_terms)
    base = {t: q_terms.count(t) / n for t in set(q_terms)}
    exp = {t: (1 - beta) * v for t, v in base.items()}
    exp[w] = exp.get(w, 0.0) + beta
    exp = {t: v for t, v in exp.items() if v > 0}
    before = oracles.ndcg(oracles.rank(oracles.bm25_scores(toks, base), ids, depth), qrels, depth)
    after = oracles.ndcg(oracles.rank(oracles.bm25_scores(toks, exp), ids, depth), qrels, depth)
    return after - before


@pytest.fixture(scope="module")
def small_world():
    cfg = synth.SynthConfig(seed=3, topics=6, theme_docs=4, planted_elsewhere=2, background=20, filler_vocab=200, dim=8)
    data = synth.generate(cfg)
    corpus = build_corpus(data.docs)
    index = InvertedIndex(corpus)
    queries = [corpus.make_query(qid, text) for qid, text in data.queries]
    emb = EmbeddingTable.random(corpus.vocab, 8, seed=0)
    return data, index, queries, emb


class TestUpdateQuery:
    def test_beta_zero_keeps_original_model(self):
        wq = update_query(Query("q", ("a", "b", "a")), ["e"], 0.0)
        assert wq.masses == {"a": Fraction(2, 3), "b": Fraction(1, 3)}

    def test_beta_one_keeps_only_expansion(self):
        wq = update_query(Query("q", ("a", "b")), ["e", "f"], 1.0)
        assert wq.masses == {"e": 1, "f": 1}

    def test_worked_masses(self):
        wq = update_query(Query("q", ("q1", "q2")), ["e"], 0.1).as_floats()
        assert wq == pytest.approx({"q1": 0.45, "q2": 0.45, "e": 0.1}, abs=1e-15)

    def test_overlapping_term_masses_add(self):
        wq = update_query(Query("q", ("a", "b")), ["a"], 0.5)
        assert wq.masses == {"a": Fraction(3, 4), "b": Fraction(1, 4)}

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.sampled_from("abcdef"), min_size=1, max_size=6),
        st.lists(st.sampled_from("uvwxyz"), max_size=5, unique=True),
        st.floats(0.0, 1.0),
    )
    def test_mass_properties(self, q_terms, exp_terms, beta):
        wq = update_query(Query("q", tuple(q_terms)), exp_terms, beta)
        assert all(m > 0 for m in wq.masses.values())
        original = sum(m for t, m in wq.masses.items() if t in q_terms)
        assert original == (1 - Fraction(beta)) * 1
        assert sum(wq.masses.values()) == (1 - Fraction(beta)) + Fraction(beta) * len(exp_terms)


class TestInterpolateAndSelect:
    def test_boundaries(self):
        qa, prf = {"a": 0.4, "b": 0.1}, {"a": 0.2, "b": 0.9}
        assert interpolate(qa, prf, 1.0) == qa
        assert interpolate(qa, prf, 0.0) == prf
        assert interpolate({"a": 0.4}, {"a": 0.2}, 0.5)["a"] == pytest.approx(0.3, abs=1e-16)

    def test_missing_keys_count_as_zero(self):
        assert interpolate({"a": 1.0}, {"b": 1.0}, 0.25) == {"a": 0.25, "b": 0.75}

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 1), st.floats(0, 2), st.booleans())
    def test_monotone(self, qa, prf, gamma, bump, which):
        before = interpolate({"t": qa}, {"t": prf}, gamma)["t"]
        after = interpolate({"t": qa + bump * which}, {"t": prf + bump * (not which)}, gamma)["t"]
        assert after >= before

    def test_select_examples(self):
        assert select_terms({"c": 0.1, "a": 0.5, "b": 0.3}, 10) == ["a", "b", "c"]
        assert select_terms({"b": 1.0, "a": 1.0}, 1) == ["a"]
        assert select_terms({"x": 0.9, "y": 0.1, "z": 0.5}, 2) == ["x", "z"]

    @settings(max_examples=200, deadline=None)
    @given(
        st.dictionaries(st.text("abcdefgh", min_size=1, max_size=3), st.integers(-50, 50), min_size=1, max_size=12),
        st.integers(1, 12), st.integers(1, 9), st.integers(-100, 100),
    )
    def test_affine_invariance(self, weights, n, scale, shift):
        w = {t: float(v) for t, v in weights.items()}
        moved = {t: scale * v + shift for t, v in w.items()}
        assert select_terms(w, n) == select_terms(moved, n)


class TestDeltaNDCG:
    def test_single_term_query_expanded_by_itself(self):
        docs = random_docs(np.random.default_rng(0), 80)
        index = InvertedIndex(build_corpus(docs, RAW))
        q = Query("q", ("w2",))
        j = {"q": {"d0001": 1, "d0005": 2}}
        assert delta_ndcg(q, "w2", index, j, ExpansionConfig()) == 0.0

    def test_beta_zero(self):
        docs = random_docs(np.random.default_rng(1), 80)
        index = InvertedIndex(build_corpus(docs, RAW))
        q = Query("q", ("w1", "w4"))
        j = {"q": {"d0003": 1}}
        cfg = ExpansionConfig(beta=0.0)
        for w in ("w0", "w7", "w20"):
            assert delta_ndcg(q, w, index, j, cfg) == 0.0

    def test_planted_term_helps(self):
        docs = [("n1", "x x a"), ("n2", "x x b"), ("n3", "x x c"), ("rel", "x planted d"), ("bg", "a b c d")]
        index = InvertedIndex(build_corpus(docs, RAW))
        q = Query("q", ("x",))
        j = {"q": {"rel": 1}}
        cfg = ExpansionConfig(beta=0.1, depth=10)
        got = delta_ndcg(q, "planted", index, j, cfg)
        assert got > 0
        assert got == pytest.approx(brute_delta(docs, ["x"], "planted", j["q"], 0.1, 10), abs=1e-12)

    def test_requires_judgments(self, toy_corpus):
        with pytest.raises(LabelError):
            delta_ndcg(Query("zz", ("apple",)), "banana", InvertedIndex(toy_corpus), {}, ExpansionConfig())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(5, 200), st.sampled_from([0.1, 0.3, 0.5, 1.0]), st.sampled_from([5, 20, 1000]))
    def test_matches_reference_and_brute_force(self, seed, n_docs, beta, depth):
        rng = np.random.default_rng(seed)
        docs = random_docs(rng, n_docs)
        index = InvertedIndex(build_corpus(docs, RAW))
        q_terms = [f"w{i}" for i in rng.choice(30, size=2)]
        q = Query("q", tuple(q_terms))
        rel = {docs[i][0]: int(rng.integers(1, 3)) for i in rng.choice(n_docs, size=min(4, n_docs), replace=False)}
        j = {"q": rel}
        cfg = ExpansionConfig(beta=beta, depth=depth)
        for w in [f"w{i}" for i in rng.choice(30, size=3, replace=False)]:
            got = delta_ndcg(q, w, index, j, cfg)
            assert got == pytest.approx(delta_ndcg_reference(q, w, index, j, cfg), abs=1e-12)
            assert got == pytest.approx(brute_delta(docs, q_terms, w, rel, beta, depth), abs=1e-12)


class TestLabels:
    def test_rows_cover_candidates(self, small_world):
        data, index, queries, _ = small_world
        cfg = ExpansionConfig(feedback_docs=5, depth=100)
        table = generate_labels(queries, index, data.qrels, cfg)
        for q in queries:
            fb = feedback_documents(index, q, 5)
            cands = sorted({t for d in fb for t in index.corpus.doc_terms(d)})
            assert [t for t, _ in table.rows[q.query_id]] == cands

    def test_empty_candidate_set(self, toy_corpus):
        index = InvertedIndex(toy_corpus)
        table = generate_labels([Query("q", ("nowhere",))], index, {"q": {"a": 1}}, ExpansionConfig())
        assert table.rows == {"q": []}

    def test_threads_do_not_change_output(self, small_world):
        data, index, queries, _ = small_world
        cfg = ExpansionConfig(feedback_docs=5, depth=100)
        a = generate_labels(queries, index, data.qrels, cfg, threads=1).to_tsv()
        b = generate_labels(queries, index, data.qrels, cfg, threads=4).to_tsv()
        assert a == b

    def test_round_trip_and_stale_cache(self, small_world, tmp_path):
        data, index, queries, _ = small_world
        cfg = ExpansionConfig(feedback_docs=3, depth=50)
        table = generate_labels(queries[:2], index, data.qrels, cfg)
        p = tmp_path / "labels.tsv"
        table.save(p)
        back = LabelTable.load(p, expect_fingerprint=table.fingerprint)
        assert back.to_tsv() == table.to_tsv()
        with pytest.raises(LabelError, match="stale"):
            LabelTable.load(p, expect_fingerprint="0" * 16)

    def test_fingerprint_tracks_config(self, small_world):
        data, index, queries, _ = small_world
        a = generate_labels(queries[:1], index, data.qrels, ExpansionConfig(feedback_docs=3, depth=50))
        b = generate_labels(queries[:1], index, data.qrels, ExpansionConfig(feedback_docs=3, depth=50, beta=0.2))
        assert a.fingerprint != b.fingerprint

    def test_best_term(self):
        assert best_term({"b": 0.2, "a": 0.2, "c": 0.1}) == "a"
        assert best_term({"a": 0.0, "b": -0.1}) is None
        assert best_term({}) is None

    def test_pointer_examples_label_every_occurrence(self, small_world):
        data, index, queries, _ = small_world
        cfg = ExpansionConfig(feedback_docs=5, depth=100)
        table = generate_labels(queries, index, data.qrels, cfg)
        exs = pointer_examples(queries, index, table, cfg, max_len=256)
        assert exs
        vocab = index.corpus.vocab
        for ex in exs:
            pos = best_term(table.deltas(ex.query.query_id))
            assert np.array_equal(ex.labels, (ex.doc_tokens == vocab.id(pos)).astype(np.int8))
            assert ex.labels.any()


@pytest.fixture(scope="module")
def trained(small_world):
    data, index, queries, emb = small_world
    cfg = ExpansionConfig(feedback_docs=5, expansion_terms=5, depth=100)
    table = generate_labels(queries, index, data.qrels, cfg)
    opts = TrainOptions(heads=2, pointer_epochs=1, ranker_epochs=5)
    pointer, ranker = train_models(queries, index, table, emb, cfg, opts)
    return pointer, ranker, cfg


class TestExpandAndRetrieve:
    def test_gamma_one_ignores_ranker(self, small_world, trained):
        _, index, queries, emb = small_world
        pointer, ranker, cfg = trained
        cfg = ExpansionConfig(5, 5, 0.1, 1.0, depth=100)
        for q in queries:
            a = expand_and_retrieve(q, index, pointer, ranker, emb, cfg)
            b = expand_and_retrieve(q, index, pointer, None, emb, cfg)
            assert a[1] == b[1] and a[0].terms == b[0].terms

    def test_gamma_zero_ignores_pointer(self, small_world, trained):
        _, index, queries, emb = small_world
        pointer, ranker, _ = trained
        cfg = ExpansionConfig(5, 5, 0.1, 0.0, depth=100)
        for q in queries:
            assert expand_and_retrieve(q, index, pointer, ranker, emb, cfg)[1] == expand_and_retrieve(q, index, None, ranker, None, cfg)[1]

    def test_beta_zero_is_first_round(self, small_world, trained):
        _, index, queries, emb = small_world
        pointer, ranker, _ = trained
        cfg = ExpansionConfig(5, 5, 0.0, 0.5, depth=100)
        for q in queries:
            assert expand_and_retrieve(q, index, pointer, ranker, emb, cfg)[1].doc_ids == retrieve(index, q, 100).doc_ids

    def test_missing_models_rejected(self, small_world, trained):
        _, index, queries, emb = small_world
        pointer, ranker, _ = trained
        with pytest.raises(ValueError):
            expand_and_retrieve(queries[0], index, None, ranker, emb, ExpansionConfig(gamma=0.5))
        with pytest.raises(ValueError):
            expand_and_retrieve(queries[0], index, pointer, None, emb, ExpansionConfig(gamma=0.5))

    def test_no_feedback_flag(self, small_world, trained):
        _, index, _, emb = small_world
        pointer, ranker, cfg = trained
        res, rl = expand_and_retrieve(Query("q", ("nowhere",)), index, pointer, ranker, emb, cfg)
        assert res.no_prf and len(rl) == 0

    def test_expansion_result_and_report(self, small_world, trained, tmp_path):
        _, index, queries, emb = small_world
        pointer, ranker, cfg = trained
        res, rl = expand_and_retrieve(queries[0], index, pointer, ranker, emb, cfg)
        assert len(res.terms) == 5 and list(res.weights) == sorted(res.weights, reverse=True)
        for t, w in zip(res.terms, res.weights):
            qa, prf, tf = res.diagnostics[t]
            assert w == pytest.approx(0.5 * qa + 0.5 * prf, abs=1e-15) and tf >= 1
        p = tmp_path / "report.tsv"
        write_report(p, [res])
        lines = p.read_text(encoding="utf-8").splitlines()
        assert lines[0] == REPORT_HEADER and len(lines) == 6
        assert lines[1].split("\t")[:3] == [queries[0].query_id, "1", res.terms[0]]

    def test_pipeline_caches_and_skips_training_at_beta_zero(self, small_world):
        data, index, queries, emb = small_world
        pipe = Pipeline(index, queries, data.qrels, emb, TrainOptions(heads=2, pointer_epochs=1, ranker_epochs=3))
        assert pipe.models(queries[:3], ExpansionConfig(beta=0.0)) == (None, None)
        cfg = ExpansionConfig(5, 5, 0.1, 0.5, depth=100)
        p1, r1 = pipe.models(queries[:3], cfg)
        p2, r2 = pipe.models(queries[:3], ExpansionConfig(5, 5, 0.1, 0.8, depth=100))
        assert p1 is p2 and r1 is r2
        _, r3 = pipe.models(queries[:3], ExpansionConfig(5, 3, 0.1, 0.5, depth=100))
        assert r3 is not r1
