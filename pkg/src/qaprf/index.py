"""Inverted index, BM25 retrieval and weighted-query retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .corpus import Corpus, Query


class RetrievalError(RuntimeError):
    pass


@dataclass(frozen=True)
class RankedList:
    query_id: str
    doc_ids: tuple[str, ...]
    scores: tuple[float, ...]
    depth: int

    def __len__(self):
        return len(self.doc_ids)

    def __iter__(self):
        return iter(zip(self.doc_ids, self.scores))

    def trec_lines(self, run_tag: str = "qaprf") -> list[str]:
        return [
            f"{self.query_id} Q0 {d} {r} {s:.6f} {run_tag}"
            for r, (d, s) in enumerate(zip(self.doc_ids, self.scores), 1)
        ]


@dataclass(frozen=True)
class WeightedQuery:
    """Term -> non-negative mass. Masses are exact rationals so that scaling
    used at retrieval time is exact (see ``InvertedIndex.term_weights``)."""

    masses: Mapping[str, Fraction]
    query_id: str = ""

    @classmethod
    def from_query(cls, q: Query) -> "WeightedQuery":
        n = len(q.terms)
        return cls({t: Fraction(c, n) for t, c in q.counts().items()}, q.query_id)

    def as_floats(self) -> dict[str, float]:
        return {t: float(m) for t, m in self.masses.items()}


class InvertedIndex:
    """CSR postings over a :class:`Corpus` with precomputed BM25 length norms."""

    def __init__(self, corpus: Corpus, k1: float = 1.2, b: float = 0.75):
        self.corpus = corpus
        self.k1 = float(k1)
        self.b = float(b)
        vocab = corpus.vocab
        n_docs = len(corpus)
        n_terms = len(vocab)
        self.num_docs = n_docs
        self.avg_len = vocab.avg_len

        lengths = np.array([d.length for d in corpus], dtype=np.float64)
        self.doc_lengths = lengths
        ratio = lengths / self.avg_len if self.avg_len > 0 else np.ones_like(lengths)
        self.norms = self.k1 * (1.0 - self.b + self.b * ratio)

        pairs_t, pairs_d, pairs_f = [], [], []
        for i, doc in enumerate(corpus):
            if doc.length == 0:
                continue
            ids, counts = np.unique(doc.tokens, return_counts=True)
            pairs_t.append(ids.astype(np.int64))
            pairs_d.append(np.full(ids.shape[0], i, dtype=np.int32))
            pairs_f.append(counts.astype(np.float64))
        if pairs_t:
            t = np.concatenate(pairs_t)
            d = np.concatenate(pairs_d)
            f = np.concatenate(pairs_f)
            order = np.lexsort((d, t))
            t, d, f = t[order], d[order], f[order]
        else:
            t = np.empty(0, np.int64)
            d = np.empty(0, np.int32)
            f = np.empty(0, np.float64)
        self.offsets = np.zeros(n_terms + 1, dtype=np.int64)
        np.add.at(self.offsets, t + 1, 1)
        self.offsets = np.cumsum(self.offsets)
        self.post_docs = np.ascontiguousarray(d, dtype=np.int32)
        self.post_tfs = np.ascontiguousarray(f, dtype=np.float64)

        df = vocab.df.astype(np.float64)
        self.idf = np.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)

        order = sorted(range(n_docs), key=lambda i: corpus.documents[i].doc_id)
        self.tie_rank = np.empty(n_docs, dtype=np.int64)
        self.tie_rank[order] = np.arange(n_docs)
        for arr in (self.norms, self.doc_lengths, self.post_docs, self.post_tfs, self.idf, self.tie_rank, self.offsets):
            arr.setflags(write=False)

    def postings(self, term_id: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.offsets[term_id], self.offsets[term_id + 1]
        return self.post_docs[lo:hi], self.post_tfs[lo:hi]

    def collection_frequency(self, term_id: int) -> int:
        return int(self.postings(term_id)[1].sum())

    def bm25_term(self, term_id: int, doc_index: int) -> float:
        """Per-term BM25 contribution of one document (0 when absent)."""
        docs, tfs = self.postings(term_id)
        pos = np.searchsorted(docs, doc_index)
        if pos >= docs.shape[0] or docs[pos] != doc_index:
            return 0.0
        tf = tfs[pos]
        return float(self.idf[term_id] * (tf * (self.k1 + 1.0) / (tf + self.norms[doc_index])))

    def term_weights(self, wq: WeightedQuery) -> list[tuple[int, float]]:
        """Resolve a weighted query to ``(term_id, weight)`` in term-id order.

        Weights are masses divided by the smallest positive mass, computed
        exactly; a plain query therefore scores with its integer term counts.
        """
        positive = {t: m for t, m in wq.masses.items() if m > 0}
        if not positive:
            raise RetrievalError(f"weighted query {wq.query_id!r} has no positive mass")
        unit = min(positive.values())
        out = []
        for t, m in positive.items():
            tid = self.corpus.vocab.get(t)
            if tid is not None:
                out.append((tid, float(Fraction(m) / unit)))
        out.sort()
        return out

    def score_array(self, weights: Iterable[tuple[int, float]]) -> np.ndarray:
        scores = np.zeros(self.num_docs, dtype=np.float64)
        k1p1 = self.k1 + 1.0
        for tid, w in weights:
            lo, hi = self.offsets[tid], self.offsets[tid + 1]
            kernels.accumulate(scores, self.post_docs[lo:hi], self.post_tfs[lo:hi], self.norms, w, float(self.idf[tid]), k1p1)
        return scores

    def _ranked(self, query_id: str, scores: np.ndarray, depth: int) -> RankedList:
        if depth < 1:
            raise ValueError("depth must be >= 1")
        top = kernels.topk(scores, self.tie_rank, depth)
        docs = self.corpus.documents
        return RankedList(query_id, tuple(docs[i].doc_id for i in top), tuple(float(scores[i]) for i in top), depth)

    def _check_nonempty(self):
        if self.num_docs == 0:
            raise RetrievalError("cannot retrieve from an empty corpus")


def bm25_score(index: InvertedIndex, q: Query, doc_index: int) -> float:
    """BM25 of one document: sum over distinct query terms, each weighted by
    its query frequency (1 for queries without repeated terms)."""
    total = 0.0
    for t, c in sorted(q.counts().items()):
        tid = index.corpus.vocab.get(t)
        if tid is not None:
            total += c * index.bm25_term(tid, doc_index)
    return total


def retrieve(index: InvertedIndex, q: Query, depth: int) -> RankedList:
    """First-round BM25 retrieval; zero-score documents are not returned."""
    return retrieve_weighted(index, WeightedQuery.from_query(q), depth, query_id=q.query_id)


def retrieve_weighted(index: InvertedIndex, wq: WeightedQuery, depth: int, query_id: str | None = None) -> RankedList:
    """Score ``sum_w P(w|Q') * bm25_term(w, d)`` up to a positive rescaling."""
    index._check_nonempty()
    scores = index.score_array(index.term_weights(wq))
    return index._ranked(wq.query_id if query_id is None else query_id, scores, depth)


def write_run(path, runs: Iterable[RankedList], run_tag: str = "qaprf") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rl in runs:
            for line in rl.trec_lines(run_tag):
                fh.write(line + "\n")


def read_run(path) -> dict[str, RankedList]:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields in run line")
            qid, _, doc, rank, score, _ = parts
            rows.setdefault(qid, []).append((int(rank), doc, float(score)))
    out = {}
    for qid, items in rows.items():
        items.sort()
        out[qid] = RankedList(qid, tuple(d for _, d, _ in items), tuple(s for _, _, s in items), len(items))
    return out


def idf_bm25(num_docs: int, df: int) -> float:
    return math.log((num_docs - df + 0.5) / (df + 0.5) + 1.0)


INDEX_MAGIC = "QA4PRF-IDX v1"


def save_index(path, index: InvertedIndex) -> None:
    """Textual artifact: header, preprocessing, documents, then postings."""
    corpus, vocab = index.corpus, index.corpus.vocab
    cfg = corpus.config
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(INDEX_MAGIC + "\n")
        fh.write(f"k1={index.k1!r} b={index.b!r} stemmer={cfg.stemmer} lowercase={int(cfg.lowercase)}\n")
        fh.write(f"docs={len(corpus)} vocab={len(vocab)} avg_len={vocab.avg_len!r}\n")
        fh.write("stopwords\t" + " ".join(sorted(cfg.stopwords)) + "\n")
        for d in corpus:
            fh.write("doc\t" + d.doc_id + "\t" + " ".join(corpus.doc_terms(d)) + "\n")
        for tid, term in enumerate(vocab.terms):
            docs, tfs = index.postings(tid)
            pairs = ",".join(f"{corpus.documents[i].doc_id}:{int(f)}" for i, f in zip(docs.tolist(), tfs.tolist()))
            fh.write(f"term\t{term}\t{int(vocab.df[tid])}\t{pairs}\n")


def load_index(path) -> InvertedIndex:
    from .corpus import PreprocessConfig, corpus_from_tokens

    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != INDEX_MAGIC:
        raise ValueError(f"{path}: not an index artifact (expected {INDEX_MAGIC!r})")
    params = dict(tok.split("=", 1) for tok in lines[1].split())
    stop_line = lines[3].split("\t", 1)
    if stop_line[0] != "stopwords":
        raise ValueError(f"{path}:4: expected stopwords line")
    stop = frozenset(stop_line[1].split()) if len(stop_line) > 1 else frozenset()
    cfg = PreprocessConfig(stop, params["stemmer"], bool(int(params["lowercase"])))
    docs = []
    for lineno, line in enumerate(lines[4:], 5):
        if not line.startswith("doc\t"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: malformed doc line")
        docs.append((parts[1], parts[2].split()))
    return InvertedIndex(corpus_from_tokens(docs, cfg), float(params["k1"]), float(params["b"]))
