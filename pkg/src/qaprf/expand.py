"""Query expansion: ΔNDCG labels, weight interpolation, term selection,
query-model update and second-round retrieval."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .corpus import Corpus, Document, Query
from .embed import EmbeddingTable
from .evaluation import _discounts, ideal_dcg
from .evaluation import ndcg as _ndcg
from .index import InvertedIndex, RankedList, WeightedQuery, retrieve, retrieve_weighted
from .qa_net import PointerConfig, PointerModel, TrainingExample, train_pointer, truncate, w_qa
from .stat_rank import QueryTerms, RankerModel, build_candidate_set, feature_matrix, train_ranker, w_prf

log = logging.getLogger(__name__)

LABELS_MAGIC = "# qaprf-labels v1"


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class ExpansionConfig:
    feedback_docs: int = 10
    expansion_terms: int = 60
    beta: float = 0.1
    gamma: float = 0.5
    alpha: float = 1.0
    depth: int = 1000

    def __post_init__(self):
        if self.feedback_docs < 1 or self.expansion_terms < 1:
            raise ValueError("feedback_docs and expansion_terms must be >= 1")
        if not 0.0 <= self.beta <= 1.0 or not 0.0 <= self.gamma <= 1.0:
            raise ValueError("beta and gamma must lie in [0, 1]")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")


@dataclass(frozen=True)
class ExpansionResult:
    query_id: str
    terms: tuple[str, ...]
    weights: tuple[float, ...]
    query: WeightedQuery
    diagnostics: Mapping[str, tuple[float, float, int]]  # term -> (W_QA, W_PRF, tf in feedback)
    no_prf: bool = False

    def report_lines(self) -> list[str]:
        out = []
        for r, (t, w) in enumerate(zip(self.terms, self.weights), 1):
            qa, prf, tf = self.diagnostics[t]
            out.append(f"{self.query_id}\t{r}\t{t}\t{w:.6f}\t{qa:.6f}\t{prf:.6f}\t{tf}")
        return out


REPORT_HEADER = "query_id\trank\tterm\tW\tW_QA\tW_PRF\ttf_feedback"


def write_report(path, results: Iterable[ExpansionResult]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPORT_HEADER + "\n")
        for res in results:
            for line in res.report_lines():
                fh.write(line + "\n")


# --- weight combination and query update ----------------------------------------------


def interpolate(wqa: Mapping[str, float], wprf: Mapping[str, float], gamma: float) -> dict[str, float]:
    """``gamma * W_QA + (1 - gamma) * W_PRF``; a missing key counts as 0."""
    keys = set(wqa) | set(wprf)
    return {t: gamma * wqa.get(t, 0.0) + (1.0 - gamma) * wprf.get(t, 0.0) for t in sorted(keys)}


def select_terms(weights: Mapping[str, float], n: int) -> list[str]:
    """Top ``n`` by weight, ties broken by ascending term."""
    return sorted(weights, key=lambda t: (-weights[t], t))[:n]


def update_query(q: Query, terms: Sequence[str], beta: float) -> WeightedQuery:
    """``(1 - beta) P(w|Q) + beta * [w in terms]``; zero masses are dropped."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    b = Fraction(beta)
    n = len(q.terms)
    masses: dict[str, Fraction] = {}
    for t, c in q.counts().items():
        masses[t] = (1 - b) * Fraction(c, n)
    for t in terms:
        masses[t] = masses.get(t, Fraction(0)) + b
    return WeightedQuery({t: m for t, m in masses.items() if m > 0}, q.query_id)


# --- ΔNDCG oracle -----------------------------------------------------------------------


class DeltaScorer:
    """ΔNDCG of single-term expansions of one query, via the scoring kernels."""

    def __init__(self, index: InvertedIndex, q: Query, qrels: Mapping[str, int], config: ExpansionConfig):
        self.index, self.q, self.config = index, q, config
        self.gains = np.zeros(index.num_docs)
        by_id = index.corpus._by_id
        for doc, rel in qrels.items():
            i = by_id.get(doc)
            if i is not None and rel > 0:
                self.gains[i] = 2.0 ** rel - 1.0
        self.discounts = _discounts(config.depth)
        self.idcg = ideal_dcg(qrels.values(), config.depth)
        self.base = self.ndcg_of(WeightedQuery.from_query(q))

    def ndcg_of(self, wq: WeightedQuery) -> float:
        if self.idcg == 0.0:
            return 0.0
        scores = self.index.score_array(self.index.term_weights(wq))
        dcg = kernels.ranked_dcg(scores, self.index.tie_rank, self.gains, self.discounts, self.config.depth)
        return dcg / self.idcg

    def __call__(self, w: str) -> float:
        return self.ndcg_of(update_query(self.q, [w], self.config.beta)) - self.base


def delta_ndcg(q: Query, w: str, index: InvertedIndex, judgments: Mapping[str, Mapping[str, int]], config: ExpansionConfig) -> float:
    if q.query_id not in judgments:
        raise LabelError(f"query {q.query_id!r} has no judgments")
    return DeltaScorer(index, q, judgments[q.query_id], config)(w)


def delta_ndcg_reference(q: Query, w: str, index: InvertedIndex, judgments, config: ExpansionConfig) -> float:
    """Same quantity through the public retrieval and metric functions."""
    qrels = judgments[q.query_id]
    before = _ndcg(retrieve(index, q, config.depth), qrels, config.depth)
    after = _ndcg(retrieve_weighted(index, update_query(q, [w], config.beta), config.depth), qrels, config.depth)
    return after - before


# --- labels -------------------------------------------------------------------------------


def feedback_documents(index: InvertedIndex, q: Query, m: int) -> list[Document]:
    first = retrieve(index, q, m)
    return [index.corpus.get(d) for d in first.doc_ids]


@dataclass
class LabelTable:
    """ΔNDCG per (query, candidate term), candidates in sorted order."""

    rows: dict[str, list[tuple[str, float]]] = field(default_factory=dict)
    fingerprint: str = ""

    def deltas(self, query_id: str) -> dict[str, float]:
        return dict(self.rows.get(query_id, []))

    def to_tsv(self) -> str:
        lines = [f"{LABELS_MAGIC} hash={self.fingerprint}", "query_id\tterm\tdelta_ndcg"]
        for qid in sorted(self.rows):
            for t, v in self.rows[qid]:
                lines.append(f"{qid}\t{t}\t{format(v, '.17g')}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_tsv())

    @classmethod
    def load(cls, path, expect_fingerprint: str | None = None) -> "LabelTable":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        head = lines[0] if lines else ""
        if not head.startswith(LABELS_MAGIC + " hash="):
            raise LabelError(f"{path}: not a label table")
        fp = head.split("hash=", 1)[1].strip()
        if expect_fingerprint is not None and fp != expect_fingerprint:
            raise LabelError(f"{path}: stale label cache (hash {fp} != {expect_fingerprint})")
        rows: dict[str, list[tuple[str, float]]] = {}
        for lineno, line in enumerate(lines[2:], 3):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise LabelError(f"{path}:{lineno}: expected 3 fields")
            rows.setdefault(parts[0], []).append((parts[1], float(parts[2])))
        return cls(rows, fp)


def label_fingerprint(index: InvertedIndex, judgments, queries: Sequence[Query], config: ExpansionConfig) -> str:
    h = hashlib.sha256()
    h.update(f"k1={index.k1!r} b={index.b!r}\n".encode())
    for d in index.corpus:
        h.update(d.doc_id.encode() + b"\t" + " ".join(index.corpus.doc_terms(d)).encode() + b"\n")
    for q in sorted(queries, key=lambda q: q.query_id):
        h.update(q.query_id.encode() + b"\t" + " ".join(q.terms).encode() + b"\n")
        for doc, rel in sorted(judgments.get(q.query_id, {}).items()):
            h.update(f"{doc}={rel};".encode())
    h.update(f"M={config.feedback_docs} beta={config.beta!r} depth={config.depth}".encode())
    return h.hexdigest()[:16]


def generate_labels(
    train_queries: Sequence[Query],
    index: InvertedIndex,
    judgments: Mapping[str, Mapping[str, int]],
    config: ExpansionConfig,
    threads: int = 1,
) -> LabelTable:
    """ΔNDCG for every candidate term of every query.

    Work is spread over ``threads`` workers per (query, term); results are
    merged in (query_id, term) order so the output never depends on
    scheduling.
    """
    jobs = []
    for q in sorted(train_queries, key=lambda q: q.query_id):
        if q.query_id not in judgments:
            raise LabelError(f"query {q.query_id!r} has no judgments")
        cands = build_candidate_set(feedback_documents(index, q, config.feedback_docs), index.corpus.vocab)
        if not cands:
            log.info("query %s: empty candidate set, no labels", q.query_id)
        jobs.append((q, cands))
    scorers = {q.query_id: DeltaScorer(index, q, judgments[q.query_id], config) for q, _ in jobs}
    tasks = [(q.query_id, t) for q, cands in jobs for t in cands]

    def run(task):
        qid, t = task
        return scorers[qid](t)

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(run, tasks, chunksize=64))
    else:
        values = [run(t) for t in tasks]
    rows: dict[str, list[tuple[str, float]]] = {q.query_id: [] for q, _ in jobs}
    for (qid, t), v in zip(tasks, values):
        rows[qid].append((t, v))
    return LabelTable(rows, label_fingerprint(index, judgments, train_queries, config))


# --- training material -------------------------------------------------------------------


def best_term(deltas: Mapping[str, float]) -> str | None:
    """Highest-ΔNDCG term (ties: smallest term), only if its gain is positive."""
    if not deltas:
        return None
    t = min(deltas, key=lambda t: (-deltas[t], t))
    return t if deltas[t] > 0 else None


def pointer_examples(
    queries: Sequence[Query], index: InvertedIndex, labels: LabelTable, config: ExpansionConfig, max_len: int
) -> list[TrainingExample]:
    vocab = index.corpus.vocab
    out = []
    for q in sorted(queries, key=lambda q: q.query_id):
        pos = best_term(labels.deltas(q.query_id))
        if pos is None:
            continue
        tid = vocab.id(pos)
        for doc in feedback_documents(index, q, config.feedback_docs):
            tokens = truncate(doc, max_len)
            y = (tokens == tid).astype(np.int8)
            if y.any():
                out.append(TrainingExample(f"{q.query_id}/{doc.doc_id}", q, tokens, y))
    return out


def ranker_data(queries: Sequence[Query], index: InvertedIndex, labels: LabelTable, config: ExpansionConfig) -> list[QueryTerms]:
    vocab = index.corpus.vocab
    out = []
    for q in sorted(queries, key=lambda q: q.query_id):
        deltas = labels.deltas(q.query_id)
        if not deltas:
            continue
        terms = sorted(deltas)
        fb = feedback_documents(index, q, config.feedback_docs)
        x = feature_matrix(terms, q, fb, vocab, config.alpha, m=config.feedback_docs)
        out.append(QueryTerms(q.query_id, terms, x, np.array([deltas[t] for t in terms])))
    return out


@dataclass(frozen=True)
class TrainOptions:
    seed: int = 0
    heads: int = 4
    pointer_epochs: int = 10
    pointer_lr: float = 1e-2
    ranker_hidden: int = 32
    ranker_epochs: int = 200
    ranker_lr: float = 0.01
    pairs_per_query: int = 64
    max_len: int = 256


def train_models(
    train_queries: Sequence[Query],
    index: InvertedIndex,
    labels: LabelTable,
    embeddings: EmbeddingTable,
    config: ExpansionConfig,
    opts: TrainOptions = TrainOptions(),
    need_pointer: bool = True,
    need_ranker: bool = True,
) -> tuple[PointerModel | None, RankerModel | None]:
    pointer = ranker = None
    if need_pointer:
        examples = pointer_examples(train_queries, index, labels, config, opts.max_len)
        pcfg = PointerConfig(dim=embeddings.dim, heads=opts.heads, max_len=opts.max_len)
        pointer = PointerModel.initialize(pcfg, seed=opts.seed)
        if examples:
            pointer, _ = train_pointer(pointer, examples, embeddings, opts.pointer_lr, opts.pointer_epochs, opts.seed)
        else:
            log.warning("no pointer training examples; keeping the initial model")
    if need_ranker:
        data = ranker_data(train_queries, index, labels, config)
        ranker = RankerModel.initialize(config.feedback_docs + 2, opts.ranker_hidden, seed=opts.seed)
        ranker, _ = train_ranker(
            ranker, data, config.expansion_terms, opts.ranker_epochs, opts.ranker_lr, opts.pairs_per_query, opts.seed
        )
    return pointer, ranker


# --- end-to-end ------------------------------------------------------------------------------


def expand_and_retrieve(
    q: Query,
    index: InvertedIndex,
    pointer_model: PointerModel | None,
    ranker_model: RankerModel | None,
    embeddings: EmbeddingTable | None,
    config: ExpansionConfig,
) -> tuple[ExpansionResult, RankedList]:
    first = retrieve(index, q, max(config.depth, config.feedback_docs))
    if len(first) == 0:
        log.info("query %s: empty first round, returning it unexpanded", q.query_id)
        wq = WeightedQuery.from_query(q)
        return ExpansionResult(q.query_id, (), (), wq, {}, no_prf=True), _cut(first, config.depth)
    if config.beta == 0.0:
        # the expansion mass is zero, so the second round equals the first
        wq = update_query(q, [], 0.0)
        return ExpansionResult(q.query_id, (), (), wq, {}), _cut(first, config.depth)
    corpus = index.corpus
    fb = [corpus.get(d) for d in first.doc_ids[: config.feedback_docs]]
    cands = build_candidate_set(fb, corpus.vocab)
    if config.gamma > 0.0:
        if pointer_model is None or embeddings is None:
            raise ValueError("gamma > 0 needs a pointer model and embeddings")
        qa = w_qa(pointer_model, q, fb, embeddings)
    else:
        qa = {}
    if config.gamma < 1.0:
        if ranker_model is None:
            raise ValueError("gamma < 1 needs a ranker model")
        prf = w_prf(ranker_model, cands, q, fb, corpus.vocab, config.alpha)
    else:
        prf = {}
    combined = interpolate({t: qa.get(t, 0.0) for t in cands}, {t: prf.get(t, 0.0) for t in cands}, config.gamma)
    terms = select_terms(combined, config.expansion_terms)
    wq = update_query(q, terms, config.beta)
    tf_fb = _feedback_tf(fb, corpus)
    diag = {t: (qa.get(t, 0.0), prf.get(t, 0.0), tf_fb.get(t, 0)) for t in terms}
    result = ExpansionResult(q.query_id, tuple(terms), tuple(combined[t] for t in terms), wq, diag)
    return result, retrieve_weighted(index, wq, config.depth, query_id=q.query_id)


def _cut(rl: RankedList, depth: int) -> RankedList:
    return RankedList(rl.query_id, rl.doc_ids[:depth], rl.scores[:depth], depth)


def _feedback_tf(fb: Sequence[Document], corpus: Corpus) -> dict[str, int]:
    out: dict[str, int] = {}
    for d in fb:
        ids, counts = np.unique(d.tokens, return_counts=True)
        for i, c in zip(ids.tolist(), counts.tolist()):
            t = corpus.vocab.term(i)
            out[t] = out.get(t, 0) + c
    return out


class Pipeline:
    """Trains on a query set and expands unseen queries.

    Label tables and trained models are cached: labels depend on (M, beta,
    depth), the pointer only on its labels, the ranker also on N and alpha.
    """

    def __init__(
        self,
        index: InvertedIndex,
        queries: Sequence[Query],
        judgments: Mapping[str, Mapping[str, int]],
        embeddings: EmbeddingTable,
        opts: TrainOptions = TrainOptions(),
        threads: int = 1,
    ):
        self.index = index
        self.queries = sorted(queries, key=lambda q: q.query_id)
        self.judgments = judgments
        self.embeddings = embeddings
        self.opts = opts
        self.threads = threads
        self._labels: dict[tuple, LabelTable] = {}
        self._pointers: dict[tuple, PointerModel] = {}
        self._rankers: dict[tuple, RankerModel] = {}

    def labels(self, config: ExpansionConfig) -> LabelTable:
        key = (config.feedback_docs, config.beta, config.depth)
        if key not in self._labels:
            judged = [q for q in self.queries if q.query_id in self.judgments]
            self._labels[key] = generate_labels(judged, self.index, self.judgments, config, self.threads)
        return self._labels[key]

    def models(self, train: Sequence[Query], config: ExpansionConfig) -> tuple[PointerModel | None, RankerModel | None]:
        ids = tuple(sorted(q.query_id for q in train))
        if config.beta == 0.0:
            return None, None
        labels = self.labels(config)
        pkey = (ids, config.feedback_docs, config.beta, config.depth)
        rkey = pkey + (config.expansion_terms, config.alpha)
        need_p = config.gamma > 0.0 and pkey not in self._pointers
        need_r = config.gamma < 1.0 and rkey not in self._rankers
        if need_p or need_r:
            p, r = train_models(train, self.index, labels, self.embeddings, config, self.opts, need_p, need_r)
            if need_p:
                self._pointers[pkey] = p
            if need_r:
                self._rankers[rkey] = r
        return self._pointers.get(pkey), self._rankers.get(rkey)

    def factory(self, config: ExpansionConfig):
        """A ``pipeline_factory`` for :func:`evaluation.cross_validate`."""

        def build(train: Sequence[Query]):
            pointer, ranker = self.models(train, config)

            def run(q: Query) -> RankedList:
                return expand_and_retrieve(q, self.index, pointer, ranker, self.embeddings, config)[1]

            return run

        return build


def config_dict(config: ExpansionConfig) -> dict:
    return asdict(config)
