"""Brute-force reference implementations used as independent test oracles.

Everything here works from raw token lists with plain Python arithmetic and
shares no code with the package.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter


def bm25_scores(docs: list[list[str]], weights: dict[str, float], k1: float = 1.2, b: float = 0.75) -> list[float]:
    """Score every document by ``sum_w weight_w * bm25_term(w, d)``."""
    n = len(docs)
    avg = sum(len(d) for d in docs) / n
    df = Counter(t for d in docs for t in set(d))
    out = []
    for d in docs:
        c = Counter(d)
        s = 0.0
        for t, w in sorted(weights.items()):
            tf = c.get(t, 0)
            if tf == 0:
                continue
            idf = math.log((n - df[t] + 0.5) / (df[t] + 0.5) + 1.0)
            s += w * idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(d) / avg))
        out.append(s)
    return out


def rank(scores: list[float], doc_ids: list[str], depth: int) -> list[str]:
    pairs = [(s, d) for s, d in zip(scores, doc_ids) if s > 0]
    pairs.sort(key=lambda x: (-x[0], x[1]))
    return [d for _, d in pairs[:depth]]


def dcg(ranking: list[str], qrels: dict[str, int], depth: int) -> float:
    total = 0.0
    for r, d in enumerate(ranking[:depth], 1):
        total += (2 ** qrels.get(d, 0) - 1) / math.log2(r + 1)
    return total


def ndcg(ranking: list[str], qrels: dict[str, int], depth: int) -> float:
    ideal = sorted((g for g in qrels.values() if g > 0), reverse=True)
    idcg = sum((2 ** g - 1) / math.log2(r + 1) for r, g in enumerate(ideal[:depth], 1))
    if idcg == 0:
        return 0.0
    return dcg(ranking, qrels, depth) / idcg


def average_precision(ranking: list[str], qrels: dict[str, int], depth: int) -> float:
    rel = {d for d, g in qrels.items() if g >= 1}
    if not rel:
        return 0.0
    top = ranking[:depth]
    total = 0.0
    for r in range(1, len(top) + 1):
        if top[r - 1] in rel:
            total += len([d for d in top[:r] if d in rel]) / r
    return total / len(rel)


def precision_at(ranking: list[str], qrels: dict[str, int], k: int) -> float:
    return len([d for d in ranking[:k] if qrels.get(d, 0) >= 1]) / k


def robustness_index(system: dict[str, float], baseline: dict[str, float]) -> float:
    diffs = [system[q] - baseline[q] for q in system]
    return (len([x for x in diffs if x > 0]) - len([x for x in diffs if x < 0])) / len(diffs)


def midranks(values: list[float]) -> list[float]:
    out = []
    for v in values:
        below = len([x for x in values if x < v])
        equal = len([x for x in values if x == v])
        out.append(below + (equal + 1) / 2)
    return out


def wilcoxon_enumerated(a: list[float], b: list[float]) -> tuple[float, float]:
    """Two-sided exact p-value by enumerating all 2^n sign assignments."""
    d = [x - y for x, y in zip(a, b) if x != y]
    n = len(d)
    ranks = midranks([abs(x) for x in d])
    w_plus = sum(r for r, x in zip(ranks, d) if x > 0)
    w_minus = sum(r for r, x in zip(ranks, d) if x < 0)
    stat = min(w_plus, w_minus)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        if sum(r for r, s in zip(ranks, signs) if s) <= stat + 1e-9:
            hits += 1
    return stat, min(1.0, 2 * hits / 2 ** n)
