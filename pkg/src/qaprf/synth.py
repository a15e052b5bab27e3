"""Synthetic corpus with a planted low-frequency expansion term per topic.

Per topic:

* a two-word query;
* relevant documents, each holding the topic's planted term; most also
  mention one or both query words, a few mention neither;
* decoy documents (non-relevant) that mention the query words and a
  theme word, which also fills unjudged off-topic documents;
* unjudged documents that hold the planted term but no query word;
* every document carries filler words and, with high probability, one
  shared high-frequency distractor word.

The planted terms share a common direction in the emitted embedding file,
standing in for the semantic regularity pretrained vectors provide. Every
planted term is checked at generation time against a brute-force re-ranking
oracle.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .corpus import PreprocessConfig, build_corpus, tokenize

_ONSETS = "b c d f g h j k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    topics: int = 50
    relevant: int = 8
    relevant_without_query: int = 2
    decoys: int = 7
    theme_docs: int = 20  # off-topic documents per topic sharing the decoys' theme word
    planted_elsewhere: int = 8  # non-relevant documents per topic holding the planted term
    background: int = 100
    filler_vocab: int = 1500
    doc_len: tuple[int, int] = (20, 40)
    distractor_rate: float = 0.95
    dim: int = 64

    @property
    def num_docs(self) -> int:
        per_topic = self.relevant + self.decoys + self.theme_docs + self.planted_elsewhere
        return self.topics * per_topic + self.background


@dataclass
class SynthData:
    docs: list[tuple[str, str]]
    queries: list[tuple[str, str]]
    qrels: dict[str, dict[str, int]]
    planted: dict[str, str]  # query_id -> planted term
    distractor: str
    vectors: dict[str, np.ndarray]


def _words(rng: np.random.Generator, n: int, config: PreprocessConfig) -> list[str]:
    """Distinct pseudo-words that survive preprocessing unchanged."""
    out, seen = [], set()
    while len(out) < n:
        k = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(k))
        w += _ONSETS[rng.integers(len(_ONSETS))]
        if w in seen or tokenize(w, config) != [w]:
            continue
        seen.add(w)
        out.append(w)
    return out


def generate(cfg: SynthConfig = SynthConfig()) -> SynthData:
    pre = PreprocessConfig()
    rng = np.random.default_rng(cfg.seed)
    words = _words(rng, cfg.filler_vocab + 4 * cfg.topics + 1, pre)
    distractor = words[0]
    topic_words = words[1 : 1 + 4 * cfg.topics]
    filler = words[1 + 4 * cfg.topics :]

    def body(extra: list[str]) -> str:
        n = int(rng.integers(cfg.doc_len[0], cfg.doc_len[1] + 1))
        toks = [filler[i] for i in rng.integers(0, len(filler), size=n)]
        if rng.random() < cfg.distractor_rate:
            toks.append(distractor)
        toks.extend(extra)
        rng.shuffle(toks)
        return " ".join(toks)

    def repeat(w: str, lo: int, hi: int) -> list[str]:
        return [w] * int(rng.integers(lo, hi + 1))

    docs, queries, planted = [], [], {}
    qrels: dict[str, dict[str, int]] = {}
    for t in range(cfg.topics):
        qa, qb, p, theme = topic_words[4 * t : 4 * t + 4]
        qid = f"q{t:03d}"
        queries.append((qid, f"{qa} {qb}"))
        planted[qid] = p
        qrels[qid] = {}
        for r in range(cfg.relevant):
            extra = repeat(p, 1, 2)
            if r >= cfg.relevant_without_query:
                first = qa if rng.random() < 0.5 else qb
                extra.append(first)
                if rng.random() < 0.5:
                    extra.append(qb if first == qa else qa)
            did = f"t{t:03d}r{r:02d}"
            docs.append((did, body(extra)))
            qrels[qid][did] = 1
        for k in range(cfg.theme_docs):
            docs.append((f"t{t:03d}m{k:02d}", body(repeat(theme, 1, 3))))
        for k in range(cfg.decoys):
            extra = [qa, qb] + [[qa, qb][int(rng.integers(2))] for _ in range(int(rng.integers(0, 2)))]
            if cfg.theme_docs:
                extra += repeat(theme, 1, 3)
            did = f"t{t:03d}d{k:02d}"
            docs.append((did, body(extra)))
            qrels[qid][did] = 0
        for k in range(cfg.planted_elsewhere):
            docs.append((f"t{t:03d}x{k:02d}", body(repeat(p, 1, 2))))
    for k in range(cfg.background):
        docs.append((f"bg{k:04d}", body([])))
    order = rng.permutation(len(docs))
    docs = [docs[i] for i in order]

    d = cfg.dim
    direction = rng.choice([-1.0, 1.0], size=d) * 0.8
    vectors = {}
    for w in words:
        vectors[w] = rng.normal(0.0, 0.5, size=d)
    for p in planted.values():
        vectors[p] = direction + rng.normal(0.0, 0.3, size=d)
    return SynthData(docs, queries, qrels, planted, distractor, vectors)


def verify(data: SynthData, beta: float = 0.1, depth: int = 1000, feedback_docs: int = 10) -> dict[str, tuple[float, float]]:
    """Brute-force ΔNDCG of the planted and distractor terms per query.

    Rescores every document from raw token counts, independently of the
    inverted index.
    """
    from collections import Counter
    import math

    pre = PreprocessConfig()
    corpus = build_corpus(data.docs, pre)
    toks = [Counter(corpus.doc_terms(doc)) for doc in corpus]
    lens = [sum(c.values()) for c in toks]
    avg = sum(lens) / len(lens)
    n = len(toks)
    df = Counter(t for c in toks for t in c)

    def bm25(weights: dict[str, float]) -> list[tuple[float, str]]:
        scored = []
        for doc, c, ln in zip(corpus.documents, toks, lens):
            s = 0.0
            for t, w in sorted(weights.items()):
                tf = c.get(t, 0)
                if tf:
                    idf = math.log((n - df[t] + 0.5) / (df[t] + 0.5) + 1.0)
                    s += w * idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * ln / avg))
            if s > 0:
                scored.append((s, doc.doc_id))
        scored.sort(key=lambda x: (-x[0], x[1]))
        return scored[:depth]

    def ndcg(ranked, qrels):
        dcg = sum((2 ** qrels.get(d, 0) - 1) / math.log2(r + 2) for r, (_, d) in enumerate(ranked))
        ideal = sorted((g for g in qrels.values() if g > 0), reverse=True)
        idcg = sum((2 ** g - 1) / math.log2(r + 2) for r, g in enumerate(ideal[:depth]))
        return dcg / idcg if idcg else 0.0

    out = {}
    for qid, text in data.queries:
        terms = tokenize(text, pre)
        base_w = {t: terms.count(t) / len(terms) for t in set(terms)}
        base = ndcg(bm25(base_w), data.qrels[qid])
        res = []
        for w in (data.planted[qid], data.distractor):
            ew = {t: (1 - beta) * v for t, v in base_w.items()}
            ew[w] = ew.get(w, 0.0) + beta
            res.append(ndcg(bm25(ew), data.qrels[qid]) - base)
        out[qid] = (res[0], res[1])
    return out


def write(data: SynthData, outdir: str, checks: dict[str, tuple[float, float]] | None = None) -> dict[str, str]:
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "corpus": os.path.join(outdir, "corpus.tsv"),
        "queries": os.path.join(outdir, "queries.tsv"),
        "qrels": os.path.join(outdir, "qrels.txt"),
        "embeddings": os.path.join(outdir, "embeddings.txt"),
        "manifest": os.path.join(outdir, "manifest.tsv"),
    }
    with open(paths["corpus"], "w", encoding="utf-8", newline="\n") as fh:
        for did, text in data.docs:
            fh.write(f"{did}\t{text}\n")
    with open(paths["queries"], "w", encoding="utf-8", newline="\n") as fh:
        for qid, text in data.queries:
            fh.write(f"{qid}\t{text}\n")
    with open(paths["qrels"], "w", encoding="utf-8", newline="\n") as fh:
        for qid in sorted(data.qrels):
            for did in sorted(data.qrels[qid]):
                fh.write(f"{qid} 0 {did} {data.qrels[qid][did]}\n")
    words = sorted(data.vectors)
    dim = len(next(iter(data.vectors.values())))
    with open(paths["embeddings"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(words)} {dim}\n")
        for w in words:
            fh.write(w + " " + " ".join(format(float(x), ".17g") for x in data.vectors[w]) + "\n")
    with open(paths["manifest"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#distractor\t{data.distractor}\n")
        fh.write("query_id\tplanted\tdelta_planted\tdelta_distractor\n")
        for qid in sorted(data.planted):
            dp, dd = checks[qid] if checks else (float("nan"), float("nan"))
            fh.write(f"{qid}\t{data.planted[qid]}\t{format(dp, '.17g')}\t{format(dd, '.17g')}\n")
    return paths


def read_manifest(path) -> tuple[str, dict[str, str]]:
    distractor, planted = "", {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "#distractor":
                distractor = parts[1]
            elif parts[0] != "query_id" and len(parts) >= 2:
                planted[parts[0]] = parts[1]
    return distractor, planted
