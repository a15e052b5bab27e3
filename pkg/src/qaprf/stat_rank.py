"""Statistical term features and the pairwise (LambdaRank-style) term ranker."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import checkpoint
from .autograd import Tensor, numeric_gradients, param, relative_error, relu, sigmoid, softplus, stable_sigmoid
from .corpus import Document, Query, Vocabulary

log = logging.getLogger(__name__)

MAGIC = "QA4PRF-LMB v1"


def idf_feature(num_docs: int, df: int) -> float:
    """``ln(C / (C_w + 1))`` floored at 0."""
    if num_docs <= 0:
        raise ValueError("collection is empty")
    return max(0.0, math.log(num_docs / (df + 1)))


def doc_tf_feature(tf: int, doc_len: int, avg_len: float, alpha: float) -> float:
    return tf * math.log(1.0 + alpha * avg_len / doc_len)


def feature_vector(
    w: str,
    q: Query,
    feedback_docs: Sequence[Document | None],
    vocab: Vocabulary,
    alpha: float = 1.0,
    m: int | None = None,
) -> np.ndarray:
    """``[v_w^Q, i_w, n_w^{D_1}, ..., n_w^{D_M}]``.

    ``m`` fixes the width; missing feedback slots (fewer documents retrieved
    than ``m``) contribute zeros.
    """
    m = len(feedback_docs) if m is None else m
    fv = np.zeros(m + 2)
    fv[0] = q.tf(w) / len(q.terms)
    fv[1] = idf_feature(vocab.num_docs, vocab.doc_freq(w))
    tid = vocab.get(w)
    for u, doc in enumerate(feedback_docs[:m]):
        if doc is None or tid is None:
            continue
        if doc.length == 0:
            log.warning("feedback document %s is empty; its feature is 0", doc.doc_id)
            continue
        tf = doc.tf(tid)
        if tf:
            fv[2 + u] = doc_tf_feature(tf, doc.length, vocab.avg_len, alpha)
    return fv


def feature_matrix(
    terms: Sequence[str],
    q: Query,
    feedback_docs: Sequence[Document],
    vocab: Vocabulary,
    alpha: float = 1.0,
    m: int | None = None,
) -> np.ndarray:
    """Vectorized :func:`feature_vector` for many terms."""
    m = len(feedback_docs) if m is None else m
    out = np.zeros((len(terms), m + 2))
    if not terms:
        return out
    n = len(q.terms)
    qc = q.counts()
    row = {}
    for i, t in enumerate(terms):
        out[i, 0] = qc.get(t, 0) / n
        out[i, 1] = idf_feature(vocab.num_docs, vocab.doc_freq(t))
        tid = vocab.get(t)
        if tid is not None:
            row[tid] = i
    for u, doc in enumerate(feedback_docs[:m]):
        if doc is None:
            continue
        if doc.length == 0:
            log.warning("feedback document %s is empty; its feature is 0", doc.doc_id)
            continue
        scale = math.log(1.0 + alpha * vocab.avg_len / doc.length)
        ids, counts = np.unique(doc.tokens, return_counts=True)
        for tid, c in zip(ids.tolist(), counts.tolist()):
            i = row.get(tid)
            if i is not None:
                out[i, 2 + u] = c * scale
    return out


def build_candidate_set(feedback_docs: Iterable[Document], vocab: Vocabulary) -> list[str]:
    """Distinct terms of the feedback documents, sorted."""
    ids = set()
    for d in feedback_docs:
        ids.update(np.unique(d.tokens).tolist())
    return sorted(vocab.term(i) for i in ids)


class RankerModel:
    """``sigmoid(theta2 . relu(theta1 x + b1) + b2)``."""

    def __init__(self, theta1, b1, theta2, b2, sigma: float = 1.0):
        self.params = {
            "theta1": param(theta1),
            "b1": param(np.asarray(b1, dtype=np.float64).reshape(1, -1)),
            "theta2": param(np.asarray(theta2, dtype=np.float64).reshape(1, -1)),
            "b2": param(np.asarray(b2, dtype=np.float64).reshape(1, 1)),
        }
        self.sigma = float(sigma)

    @classmethod
    def initialize(cls, in_dim: int, hidden: int = 32, seed: int = 0, sigma: float = 1.0) -> "RankerModel":
        rng = np.random.default_rng(seed)
        t1 = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(hidden, in_dim))
        t2 = rng.normal(0.0, 1.0 / math.sqrt(hidden), size=(1, hidden))
        return cls(t1, np.zeros(hidden), t2, np.zeros(1), sigma)

    @classmethod
    def zeros(cls, in_dim: int, hidden: int = 32, sigma: float = 1.0) -> "RankerModel":
        return cls(np.zeros((hidden, in_dim)), np.zeros(hidden), np.zeros(hidden), np.zeros(1), sigma)

    @property
    def in_dim(self) -> int:
        return self.params["theta1"].data.shape[1]

    @property
    def hidden(self) -> int:
        return self.params["theta1"].data.shape[0]

    def copy(self) -> "RankerModel":
        p = {k: v.data.copy() for k, v in self.params.items()}
        return RankerModel(p["theta1"], p["b1"], p["theta2"], p["b2"], self.sigma)

    def forward(self, x: Tensor) -> Tensor:
        p = self.params
        h = relu(x @ p["theta1"].T + p["b1"])
        return sigmoid(h @ p["theta2"].T + p["b2"])

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise ValueError(f"feature dimension {x.shape[1]} != model input {self.in_dim}")
        p = {k: v.data for k, v in self.params.items()}
        h = np.maximum(x @ p["theta1"].T + p["b1"], 0.0)
        return stable_sigmoid(h @ p["theta2"].T + p["b2"])[:, 0]

    def save(self, path) -> None:
        hyper = {"in_dim": self.in_dim, "hidden": self.hidden, "sigma": format(self.sigma, ".17g")}
        checkpoint.save(path, MAGIC, hyper, {k: v.data for k, v in self.params.items()})

    @classmethod
    def load(cls, path) -> "RankerModel":
        hyper, t = checkpoint.load(path, MAGIC)
        for k in ("theta1", "b1", "theta2", "b2"):
            if k not in t:
                raise checkpoint.CheckpointError(f"{path}: missing tensor {k}")
        return cls(t["theta1"], t["b1"], t["theta2"], t["b2"], float(hyper.get("sigma", 1.0)))


def ranker_forward(model: RankerModel, fv: np.ndarray) -> float:
    fv = np.asarray(fv, dtype=np.float64)
    if fv.ndim != 1:
        raise ValueError("expected a single feature vector")
    return float(model.predict(fv)[0])


def pairwise_loss_value(delta_i: float, delta_j: float, p_i: float, p_j: float, sigma: float = 1.0) -> float:
    """``|delta_i - delta_j| * log(1 + exp(-sigma (p_i - p_j)))``."""
    return abs(delta_i - delta_j) * float(np.logaddexp(0.0, -sigma * (p_i - p_j)))


def pairwise_loss(model: RankerModel, fv_i: np.ndarray, fv_j: np.ndarray, delta_i: float, delta_j: float) -> float:
    p = model.predict(np.stack([fv_i, fv_j]))
    return pairwise_loss_value(delta_i, delta_j, p[0], p[1], model.sigma)


@dataclass
class QueryTerms:
    """Training material for one query: candidate terms, features, labels."""

    query_id: str
    terms: list[str]
    features: np.ndarray
    deltas: np.ndarray


@dataclass(frozen=True)
class TermPairBatch:
    """Pairs (row_i, row_j) into a stacked feature matrix with delta_i > delta_j."""

    features_i: np.ndarray
    features_j: np.ndarray
    weights: np.ndarray  # |delta_i - delta_j|


def split_relevant(deltas: np.ndarray, terms: Sequence[str], n_relevant: int) -> tuple[np.ndarray, np.ndarray]:
    order = sorted(range(len(terms)), key=lambda i: (-deltas[i], terms[i]))
    return np.array(order[:n_relevant], dtype=np.int64), np.array(order[n_relevant:], dtype=np.int64)


def valid_pairs(qt: QueryTerms, n_relevant: int) -> np.ndarray:
    """All (i, j) with i relevant, j irrelevant and delta_i > delta_j, sorted."""
    if len(qt.terms) < n_relevant + 1:
        log.info("query %s has %d candidates (< N+1); no pairs", qt.query_id, len(qt.terms))
        return np.zeros((0, 2), dtype=np.int64)
    rel, irr = split_relevant(qt.deltas, qt.terms, n_relevant)
    pairs = [(i, j) for i in rel.tolist() for j in irr.tolist() if qt.deltas[i] > qt.deltas[j]]
    pairs.sort()
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def batch_loss(model: RankerModel, batch: TermPairBatch) -> Tensor:
    pi = model.forward(Tensor(batch.features_i))
    pj = model.forward(Tensor(batch.features_j))
    return (softplus((pi - pj) * (-model.sigma)) * batch.weights[:, None]).sum()


def make_batch(data: Sequence[QueryTerms], picks: Mapping[int, np.ndarray]) -> TermPairBatch:
    """Stack sampled pairs in canonical (query, i, j) order."""
    fi, fj, w = [], [], []
    for qi in sorted(picks):
        qt = data[qi]
        pairs = picks[qi]
        if pairs.shape[0] == 0:
            continue
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        fi.append(qt.features[pairs[:, 0]])
        fj.append(qt.features[pairs[:, 1]])
        w.append(np.abs(qt.deltas[pairs[:, 0]] - qt.deltas[pairs[:, 1]]))
    if not fi:
        dim = data[0].features.shape[1] if data else 0
        return TermPairBatch(np.zeros((0, dim)), np.zeros((0, dim)), np.zeros(0))
    return TermPairBatch(np.concatenate(fi), np.concatenate(fj), np.concatenate(w))


def train_ranker(
    model: RankerModel,
    data: Sequence[QueryTerms],
    n_relevant: int,
    epochs: int = 200,
    lr: float = 0.01,
    pairs_per_query: int = 64,
    seed: int = 0,
    clip_norm: float = 5.0,
) -> tuple[RankerModel, list[float]]:
    """Full-batch gradient descent on the summed pairwise loss.

    Pairs are resampled each epoch (uniformly, with replacement, from the
    valid relevant x irrelevant pairs of each query) from one seeded stream.
    The trace holds the loss of each epoch's batch before its update.
    """
    model = model.copy()
    rng = np.random.default_rng(seed)
    pools = {qi: valid_pairs(qt, n_relevant) for qi, qt in enumerate(data)}
    pools = {qi: p for qi, p in pools.items() if p.shape[0]}
    trace: list[float] = []
    for _ in range(epochs):
        picks = {qi: pool[rng.integers(0, pool.shape[0], size=pairs_per_query)] for qi, pool in pools.items()}
        batch = make_batch(data, picks)
        if batch.weights.shape[0] == 0:
            trace.append(0.0)
            continue
        step(model, batch, lr, clip_norm, trace)
    return model, trace


def step(model: RankerModel, batch: TermPairBatch, lr: float, clip_norm: float, trace: list[float] | None = None) -> float:
    for t in model.params.values():
        t.grad = None
    loss = batch_loss(model, batch)
    val = float(loss.data)
    if not math.isfinite(val):
        raise FloatingPointError("non-finite ranker loss")
    loss.backward()
    for t in model.params.values():
        if t.grad is None:
            continue
        g = t.grad
        n = float(np.sqrt((g * g).sum()))
        if n > clip_norm:
            g = g * (clip_norm / n)
        t.data = t.data - lr * g
        t.grad = None
    if trace is not None:
        trace.append(val)
    return val


def gradient_check(model: RankerModel, batch: TermPairBatch, step_size: float = 1e-5) -> tuple[float, dict[str, float]]:
    model = model.copy()
    for t in model.params.values():
        t.grad = None
    batch_loss(model, batch).backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in model.params.items()}
    numeric = numeric_gradients(lambda: float(batch_loss(model, batch).data), model.params, step_size)
    per = {k: relative_error(analytic[k], numeric[k]) for k in analytic}
    return max(per.values()), per


def w_prf(
    model: RankerModel,
    candidates: Sequence[str],
    q: Query,
    feedback_docs: Sequence[Document],
    vocab: Vocabulary,
    alpha: float = 1.0,
) -> dict[str, float]:
    if not candidates:
        return {}
    x = feature_matrix(list(candidates), q, feedback_docs, vocab, alpha, m=model.in_dim - 2)
    scores = model.predict(x)
    return dict(zip(candidates, scores.tolist()))
