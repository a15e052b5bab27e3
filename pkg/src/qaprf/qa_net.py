"""Attention-based pointer network over feedback documents.

Architecture, per (query, document) pair:

* one self-attention block per side: multi-head scaled dot-product
  attention, residual + layer norm, two-layer ReLU feed-forward, residual +
  layer norm;
* attention flow between the encoded document ``O`` (m x d) and query
  ``R`` (n x d) with trilinear similarity ``S_ij = w . [o_i; r_j; o_i*r_j]``,
  doc-to-query ``A = softmax_rows(S) R``, query-to-doc
  ``b = softmax(max_j S_ij)``, and ``E = (A + tile(b O) + O) / 3``;
* pointer head ``a_i = theta1 . tanh(theta2 qbar + theta3 E_i)`` with a
  softmax over document positions, ``qbar`` being the mean query word vector.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import checkpoint
from .autograd import (
    Tensor,
    clip,
    concat,
    constant,
    layer_norm,
    log,
    numeric_gradients,
    param,
    relative_error,
    relu,
    softmax,
    softmax_array,
    take_rows,
    tanh,
)
from .corpus import Document, Query
from .embed import EmbeddingTable, positional_encoding

log_ = logging.getLogger(__name__)

MAGIC = "QA4PRF-PTR v1"
PROB_FLOOR = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PointerConfig:
    dim: int = 64
    heads: int = 4
    ff_hidden: int = 0  # 0 -> 2 * dim
    pointer_hidden: int = 0  # 0 -> dim
    max_len: int = 256
    positional: bool = True
    loss: str = "bce"  # "bce" | "linear" (the log-free form)
    tune_embeddings: bool = False

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.loss not in ("bce", "linear"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.ff_hidden:
            object.__setattr__(self, "ff_hidden", 2 * self.dim)
        if not self.pointer_hidden:
            object.__setattr__(self, "pointer_hidden", self.dim)

    @property
    def key_dim(self) -> int:
        return self.dim // self.heads


BLOCK_TENSORS = ("wq", "wk", "wv", "ln1.g", "ln1.b", "ff1.w", "ff1.b", "ff2.w", "ff2.b", "ln2.g", "ln2.b")


def _glorot(rng, rows, cols):
    lim = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-lim, lim, size=(rows, cols))


@dataclass(frozen=True)
class PointerOutput:
    probs: np.ndarray  # over document positions
    qbar: np.ndarray


@dataclass
class TrainingExample:
    example_id: str
    query: Query
    doc_tokens: np.ndarray  # term ids, already truncated
    labels: np.ndarray  # 0/1 per position


class PointerModel:
    def __init__(self, config: PointerConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: PointerConfig, seed: int = 0, embeddings: EmbeddingTable | None = None) -> "PointerModel":
        rng = np.random.default_rng(seed)
        d, f, h = config.dim, config.ff_hidden, config.pointer_hidden
        p = {}
        for side in ("doc", "qry"):
            p[f"{side}.wq"] = _glorot(rng, d, d)
            p[f"{side}.wk"] = _glorot(rng, d, d)
            p[f"{side}.wv"] = _glorot(rng, d, d)
            p[f"{side}.ln1.g"] = np.ones((1, d))
            p[f"{side}.ln1.b"] = np.zeros((1, d))
            p[f"{side}.ff1.w"] = _glorot(rng, d, f)
            p[f"{side}.ff1.b"] = np.zeros((1, f))
            p[f"{side}.ff2.w"] = _glorot(rng, f, d)
            p[f"{side}.ff2.b"] = np.zeros((1, d))
            p[f"{side}.ln2.g"] = np.ones((1, d))
            p[f"{side}.ln2.b"] = np.zeros((1, d))
        p["flow.w"] = rng.uniform(-0.1, 0.1, size=(1, 3 * d))
        p["ptr.theta1"] = _glorot(rng, h, 1)
        p["ptr.theta2"] = _glorot(rng, h, d)
        p["ptr.theta3"] = _glorot(rng, h, d)
        if config.tune_embeddings:
            if embeddings is None:
                raise ValueError("tune_embeddings requires an embedding table")
            p["embed.table"] = embeddings.matrix.copy()
        return cls(config, {k: param(v) for k, v in p.items()})

    def copy(self) -> "PointerModel":
        return PointerModel(self.config, {k: param(v.data.copy()) for k, v in self.params.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    # --- forward ------------------------------------------------------------------
    def attend(self, x: Tensor, side: str) -> Tensor:
        """Multi-head scaled dot-product self-attention (no residual, no norm)."""
        p = self.params
        dk = self.config.key_dim
        scale = 1.0 / math.sqrt(dk)
        q = x @ p[f"{side}.wq"]
        k = x @ p[f"{side}.wk"]
        v = x @ p[f"{side}.wv"]
        heads = []
        for i in range(self.config.heads):
            sl = (slice(None), slice(i * dk, (i + 1) * dk))
            att = softmax((q[sl] @ k[sl].T) * scale, axis=1)
            heads.append(att @ v[sl])
        return heads[0] if len(heads) == 1 else concat(heads, axis=1)

    def _block(self, x: Tensor, side: str) -> Tensor:
        p = self.params
        t = layer_norm(x + self.attend(x, side), p[f"{side}.ln1.g"], p[f"{side}.ln1.b"])
        hid = relu(t @ p[f"{side}.ff1.w"] + p[f"{side}.ff1.b"])
        o = hid @ p[f"{side}.ff2.w"] + p[f"{side}.ff2.b"]
        return layer_norm(t + o, p[f"{side}.ln2.g"], p[f"{side}.ln2.b"])

    def flow_terms(self, o: Tensor, r: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Similarity ``S`` (m x n), doc-to-query ``A`` (m x d), query-to-doc
        summary ``b O`` (1 x d) and the fused output ``E`` (m x d)."""
        d = self.config.dim
        w = self.params["flow.w"]
        w_o, w_r, w_or = w[:, :d], w[:, d : 2 * d], w[:, 2 * d :]
        s = (o @ w_o.T) + (r @ w_r.T).T + (o * w_or) @ r.T
        a = softmax(s, axis=1) @ r
        b = softmax(s.max(axis=1, keepdims=True).T, axis=1)
        b_tilde = b @ o
        return s, a, b_tilde, (a + b_tilde + o) * (1.0 / 3.0)

    def _flow(self, o: Tensor, r: Tensor) -> Tensor:
        return self.flow_terms(o, r)[3]

    def _pointer(self, e: Tensor, qbar: Tensor) -> Tensor:
        p = self.params
        hidden = tanh(qbar @ p["ptr.theta2"].T + e @ p["ptr.theta3"].T)
        return (hidden @ p["ptr.theta1"]).T  # 1 x m logits

    def _inputs(self, q_terms: Sequence[str], doc_tokens: np.ndarray, emb: EmbeddingTable):
        cfg = self.config
        m, n = len(doc_tokens), len(q_terms)
        if m == 0:
            raise ValueError("empty document")
        if m > cfg.max_len or n > cfg.max_len:
            raise ValueError(f"sequence longer than max_len={cfg.max_len}")
        if emb.dim != cfg.dim:
            raise ValueError(f"embedding dim {emb.dim} != model dim {cfg.dim}")
        pe = positional_encoding(max(m, n), cfg.dim) if cfg.positional else np.zeros((max(m, n), cfg.dim))
        if cfg.tune_embeddings:
            table = self.params["embed.table"]
            dw = take_rows(table, np.asarray(doc_tokens, dtype=np.int64))
            rows = []
            for t in q_terms:
                i = emb.vocab.get(t)
                rows.append(take_rows(table, np.array([i])) if i is not None else constant(emb.vector(t)[None, :]))
            qw = rows[0] if n == 1 else concat(rows, axis=0)
        else:
            dw = constant(emb.rows(doc_tokens))
            qw = constant(emb.vectors(list(q_terms)))
        return dw + pe[:m], qw + pe[:n], qw.mean(axis=0, keepdims=True)

    def logits(self, q_terms: Sequence[str], doc_tokens: np.ndarray, emb: EmbeddingTable) -> tuple[Tensor, Tensor]:
        d_in, q_in, qbar = self._inputs(q_terms, doc_tokens, emb)
        o = self._block(d_in, "doc")
        r = self._block(q_in, "qry")
        e = self._flow(o, r)
        return self._pointer(e, qbar), qbar

    def loss(self, ex: TrainingExample, emb: EmbeddingTable) -> Tensor:
        z, _ = self.logits(ex.query.terms, ex.doc_tokens, emb)
        p = softmax(z, axis=1)
        y = ex.labels[None, :].astype(np.float64)
        if self.config.loss == "linear":
            return -((p * y).sum() + ((1.0 - p) * (1.0 - y)).sum())
        pc = clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
        return -((log(pc) * y).sum() + (log(1.0 - pc) * (1.0 - y)).sum())

    # --- persistence --------------------------------------------------------------
    def save(self, path) -> None:
        cfg = self.config
        hyper = {
            "dim": cfg.dim,
            "heads": cfg.heads,
            "ff_hidden": cfg.ff_hidden,
            "pointer_hidden": cfg.pointer_hidden,
            "max_len": cfg.max_len,
            "positional": int(cfg.positional),
            "loss": cfg.loss,
            "tune_embeddings": int(cfg.tune_embeddings),
        }
        checkpoint.save(path, MAGIC, hyper, self.arrays())

    @classmethod
    def load(cls, path) -> "PointerModel":
        hyper, tensors = checkpoint.load(path, MAGIC)
        cfg = PointerConfig(
            dim=int(hyper["dim"]),
            heads=int(hyper["heads"]),
            ff_hidden=int(hyper["ff_hidden"]),
            pointer_hidden=int(hyper["pointer_hidden"]),
            max_len=int(hyper["max_len"]),
            positional=bool(int(hyper["positional"])),
            loss=hyper["loss"],
            tune_embeddings=bool(int(hyper["tune_embeddings"])),
        )
        expected = cls.initialize(replace(cfg, tune_embeddings=False)).params.keys()
        missing = [k for k in expected if k not in tensors]
        if missing:
            raise checkpoint.CheckpointError(f"{path}: missing tensors {missing}")
        return cls(cfg, {k: param(v) for k, v in tensors.items()})


def truncate(doc: Document, max_len: int) -> np.ndarray:
    return doc.tokens[:max_len]


def pointer_forward(model: PointerModel, query: Query, doc: Document, embeddings: EmbeddingTable) -> PointerOutput:
    """Expansion distribution over the positions of one (truncated) document."""
    tokens = doc.tokens
    if tokens.shape[0] > model.config.max_len:
        raise ValueError(f"document {doc.doc_id} exceeds max_len; truncate upstream")
    z, qbar = model.logits(query.terms, tokens, embeddings)
    return PointerOutput(softmax_array(z.data, axis=1)[0], qbar.data[0])


def w_qa(model: PointerModel, query: Query, feedback_docs: Sequence[Document], embeddings: EmbeddingTable) -> dict[str, float]:
    """Sum pointer mass per term over every position of every feedback document."""
    vocab = embeddings.vocab
    out: dict[str, float] = defaultdict(float)
    for doc in feedback_docs:
        tokens = truncate(doc, model.config.max_len)
        if tokens.shape[0] == 0:
            continue
        z, _ = model.logits(query.terms, tokens, embeddings)
        probs = softmax_array(z.data, axis=1)[0]
        for tid, pr in zip(tokens.tolist(), probs.tolist()):
            out[vocab.term(tid)] += pr
    return dict(out)


# --- training ---------------------------------------------------------------------


def _clip_grad(g: np.ndarray, max_norm: float) -> np.ndarray:
    n = float(np.sqrt((g * g).sum()))
    return g * (max_norm / n) if n > max_norm else g


def evaluate_loss(model: PointerModel, examples: Sequence[TrainingExample], embeddings: EmbeddingTable) -> float:
    total = 0.0
    for ex in examples:
        total += float(model.loss(ex, embeddings).data)
    return total / len(examples)


def train_pointer(
    model: PointerModel,
    examples: Sequence[TrainingExample],
    embeddings: EmbeddingTable,
    lr: float = 1e-2,
    epochs: int = 10,
    seed: int = 0,
    clip_norm: float = 5.0,
) -> tuple[PointerModel, list[float]]:
    """SGD over examples in a seeded shuffle order.

    Returns the trained copy and a loss trace: the initial mean loss, then
    the mean per-step (pre-update) loss of each epoch.
    """
    usable = [ex for ex in examples if ex.labels.any()]
    if len(usable) < len(examples):
        log_.info("skipping %d examples without a positive position", len(examples) - len(usable))
    if not usable:
        raise TrainingError("no training example has a positive label")
    model = model.copy()
    rng = np.random.default_rng(seed)
    trace = [evaluate_loss(model, usable, embeddings)]
    if not math.isfinite(trace[0]):
        raise TrainingError("non-finite initial loss")
    for epoch in range(epochs):
        order = rng.permutation(len(usable))
        total = 0.0
        for i in order:
            ex = usable[i]
            for t in model.params.values():
                t.grad = None
            loss = model.loss(ex, embeddings)
            val = float(loss.data)
            if not math.isfinite(val):
                raise TrainingError(f"non-finite loss on example {ex.example_id} (epoch {epoch})")
            loss.backward()
            for name, t in model.params.items():
                if t.grad is None:
                    continue
                t.data = t.data - lr * _clip_grad(t.grad, clip_norm)
                if not np.all(np.isfinite(t.data)):
                    raise TrainingError(f"parameter {name} became non-finite on example {ex.example_id}")
            total += val
        trace.append(total / len(usable))
    for t in model.params.values():
        t.grad = None
    return model, trace


def analytic_gradients(model: PointerModel, ex: TrainingExample, emb: EmbeddingTable) -> dict[str, np.ndarray]:
    for t in model.params.values():
        t.grad = None
    model.loss(ex, emb).backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in model.params.items()}
    for t in model.params.values():
        t.grad = None
    return grads


def gradient_check(model: PointerModel, example: TrainingExample, embeddings: EmbeddingTable, step: float = 1e-5) -> tuple[float, dict[str, float]]:
    """Max relative error between backprop and central differences, plus the
    per-tensor errors."""
    model = model.copy()
    analytic = analytic_gradients(model, example, embeddings)
    numeric = numeric_gradients(lambda: float(model.loss(example, embeddings).data), model.params, step)
    per = {k: relative_error(analytic[k], numeric[k]) for k in analytic}
    return max(per.values()), per
