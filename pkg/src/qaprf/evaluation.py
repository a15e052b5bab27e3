"""Ranking metrics, significance testing, cross-validation and sweeps."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Query
from .index import RankedList

Judgments = dict  # query_id -> {doc_id: grade}

FULL_PROFILE = {"depth": 1000, "k": 20}
SHORT_PROFILE = {"depth": 5, "k": 5}


class EvaluationError(ValueError):
    pass


def load_qrels(path) -> dict[str, dict[str, int]]:
    """TREC qrels: ``query_id 0 doc_id relevance``."""
    out: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 4:
                raise EvaluationError(f"{path}:{lineno}: expected 'query_id 0 doc_id relevance'")
            qid, _, doc, rel = parts
            grade = int(rel)
            if grade < 0:
                raise EvaluationError(f"{path}:{lineno}: negative relevance")
            out.setdefault(qid, {})[doc] = grade
    return out


def write_qrels(path, judgments: Mapping[str, Mapping[str, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid in sorted(judgments):
            for doc in sorted(judgments[qid]):
                fh.write(f"{qid} 0 {doc} {judgments[qid][doc]}\n")


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2, dtype=np.float64))


def ideal_dcg(rels: Iterable[int], depth: int) -> float:
    g = sorted((2.0 ** r - 1.0 for r in rels if r > 0), reverse=True)[:depth]
    if not g:
        return 0.0
    return float(np.cumsum(np.asarray(g) * _discounts(len(g)))[-1])


def ndcg(ranking: RankedList | Sequence[str], qrels: Mapping[str, int], depth: int) -> float:
    """Exponential-gain NDCG@depth; 0 when the query has no relevant document."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    docs = list(ranking.doc_ids if isinstance(ranking, RankedList) else ranking)[:depth]
    idcg = ideal_dcg(qrels.values(), depth)
    if idcg == 0.0:
        return 0.0
    if not docs:
        return 0.0
    gains = np.array([2.0 ** qrels.get(d, 0) - 1.0 for d in docs])
    dcg = float(np.cumsum(gains * _discounts(len(docs)))[-1])
    return dcg / idcg


def average_precision(ranking: RankedList | Sequence[str], qrels: Mapping[str, int], depth: int) -> float:
    docs = list(ranking.doc_ids if isinstance(ranking, RankedList) else ranking)[:depth]
    total_rel = sum(1 for r in qrels.values() if r >= 1)
    if total_rel == 0:
        return 0.0
    hits, acc = 0, 0.0
    for r, d in enumerate(docs, 1):
        if qrels.get(d, 0) >= 1:
            hits += 1
            acc += hits / r
    return acc / total_rel


def precision_at(ranking: RankedList | Sequence[str], qrels: Mapping[str, int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    docs = list(ranking.doc_ids if isinstance(ranking, RankedList) else ranking)[:k]
    return sum(1 for d in docs if qrels.get(d, 0) >= 1) / k


def robustness_index(system: Mapping[str, float], baseline: Mapping[str, float]) -> float:
    """``(n_better - n_worse) / |Q|``; exact ties count in neither."""
    if set(system) != set(baseline):
        raise EvaluationError("robustness index needs identical query sets")
    if not system:
        raise EvaluationError("no queries")
    better = sum(1 for q in system if system[q] > baseline[q])
    worse = sum(1 for q in system if system[q] < baseline[q])
    return (better - worse) / len(system)


# --- Wilcoxon signed-rank ---------------------------------------------------------

EXACT_MAX_N = 25


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def _exact_cdf_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Number of sign patterns giving each value of 2*W+ (subset-sum DP)."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    return counts


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-)
    pvalue: float
    n: int
    method: str  # "exact" | "normal"


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    """Two-sided paired test; zero differences dropped, ties get average ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EvaluationError("paired samples must have equal length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n < 5:
        raise EvaluationError(f"only {n} non-zero differences; need at least 5")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _exact_cdf_counts(doubled)
        t = int(round(2 * stat))
        tail = sum(counts[: t + 1])
        p = min(1.0, 2.0 * float(tail) / float(2 ** n))
        return WilcoxonResult(stat, p, n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts ** 3) - tie_counts).sum()) / 48.0
    z = max(0.0, abs(w_plus - mean) - 0.5) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return WilcoxonResult(stat, p, n, "normal")


# --- reports ------------------------------------------------------------------------


@dataclass
class EvalReport:
    depth: int
    k: int
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    ri: float | None = None
    wilcoxon: WilcoxonResult | None = None
    wilcoxon_note: str = ""

    @property
    def query_ids(self) -> list[str]:
        return sorted(self.per_query)

    def metric(self, name: str) -> dict[str, float]:
        return {q: self.per_query[q][name] for q in self.query_ids}

    def mean(self, name: str) -> float:
        vals = [self.per_query[q][name] for q in self.query_ids]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def metric_names(self) -> list[str]:
        return ["map", "ndcg", f"p@{self.k}"]

    def means(self) -> dict[str, float]:
        return {m: self.mean(m) for m in self.metric_names}

    def to_tsv(self) -> str:
        names = self.metric_names
        lines = ["query_id\t" + "\t".join(names)]
        for q in self.query_ids:
            lines.append(q + "\t" + "\t".join(f"{self.per_query[q][m]:.6f}" for m in names))
        lines.append("ALL\t" + "\t".join(f"{self.mean(m):.6f}" for m in names))
        if self.ri is not None:
            lines.append(f"#ri\t{self.ri:.6f}")
        if self.wilcoxon is not None:
            w = self.wilcoxon
            lines.append(f"#wilcoxon\tstatistic={w.statistic:g}\tp={w.pvalue:.6g}\tn={w.n}\tmethod={w.method}")
        elif self.wilcoxon_note:
            lines.append(f"#wilcoxon\t{self.wilcoxon_note}")
        return "\n".join(lines) + "\n"


def evaluate_runs(
    runs: Mapping[str, RankedList],
    judgments: Mapping[str, Mapping[str, int]],
    depth: int = 1000,
    k: int = 20,
    baseline: Mapping[str, RankedList] | None = None,
) -> EvalReport:
    report = EvalReport(depth, k)
    for qid in sorted(runs):
        qrels = judgments.get(qid, {})
        rl = runs[qid]
        report.per_query[qid] = {
            "map": average_precision(rl, qrels, depth),
            "ndcg": ndcg(rl, qrels, depth),
            f"p@{k}": precision_at(rl, qrels, k),
        }
    if baseline is not None:
        attach_baseline(report, evaluate_runs(baseline, judgments, depth, k))
    return report


def attach_baseline(report: EvalReport, base: EvalReport) -> None:
    sys_ndcg = report.metric("ndcg")
    base_ndcg = {q: base.per_query[q]["ndcg"] for q in sys_ndcg if q in base.per_query}
    report.ri = robustness_index(sys_ndcg, base_ndcg)
    try:
        qs = sorted(sys_ndcg)
        report.wilcoxon = wilcoxon_signed_rank([sys_ndcg[q] for q in qs], [base_ndcg[q] for q in qs])
    except EvaluationError as exc:
        report.wilcoxon = None
        report.wilcoxon_note = f"not significant ({exc})"


# --- cross-validation and sweeps -------------------------------------------------------

RunFn = Callable[[Query], RankedList]
PipelineFactory = Callable[[Sequence[Query]], RunFn]


def fold_assignment(query_ids: Sequence[str], folds: int, seed: int) -> list[list[str]]:
    ids = sorted(query_ids)
    if folds < 2 or folds > len(ids):
        raise EvaluationError(f"need 2 <= folds <= #queries, got folds={folds} for {len(ids)} queries")
    perm = np.random.default_rng(seed).permutation(len(ids))
    return [sorted(ids[i] for i in part) for part in np.array_split(perm, folds)]


@dataclass
class CVResult:
    folds: list[list[str]]
    fold_reports: list[EvalReport]
    pooled: EvalReport
    runs: dict[str, RankedList]


def cross_validate(
    queries: Sequence[Query],
    judgments: Mapping[str, Mapping[str, int]],
    pipeline_factory: PipelineFactory,
    folds: int = 5,
    seed: int = 0,
    depth: int = 1000,
    k: int = 20,
    baseline: Mapping[str, RankedList] | None = None,
) -> CVResult:
    """Each fold is the test set once; the rest trains the pipeline."""
    by_id = {q.query_id: q for q in queries}
    parts = fold_assignment(list(by_id), folds, seed)
    runs: dict[str, RankedList] = {}
    reports = []
    for i, test_ids in enumerate(parts):
        train = [by_id[q] for p, part in enumerate(parts) if p != i for q in part]
        run = pipeline_factory(train)
        fold_runs = {q: run(by_id[q]) for q in test_ids}
        runs.update(fold_runs)
        reports.append(evaluate_runs(fold_runs, judgments, depth, k))
    pooled = evaluate_runs(runs, judgments, depth, k)
    if baseline is not None:
        attach_baseline(pooled, evaluate_runs({q: baseline[q] for q in runs}, judgments, depth, k))
    return CVResult(parts, reports, pooled, runs)


@dataclass
class SweepRow:
    setting: dict
    metrics: dict[str, float]


@dataclass
class SweepResult:
    rows: list[SweepRow]

    @property
    def best(self) -> SweepRow:
        return max(self.rows, key=lambda r: r.metrics["map"])

    def to_tsv(self) -> str:
        keys = list(self.rows[0].setting) if self.rows else []
        mnames = list(self.rows[0].metrics) if self.rows else []
        lines = ["\t".join(keys + mnames)]
        for r in self.rows:
            lines.append("\t".join([str(r.setting[k]) for k in keys] + [f"{r.metrics[m]:.6f}" for m in mnames]))
        if self.rows:
            b = self.best
            lines.append("#best\t" + " ".join(f"{k}={b.setting[k]}" for k in keys))
        return "\n".join(lines) + "\n"


def grid_points(grid: Mapping[str, Sequence]) -> list[dict]:
    if not grid:
        raise EvaluationError("sweep grid is empty")
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def sweep(grid: Mapping[str, Sequence], evaluate: Callable[[dict], EvalReport]) -> SweepResult:
    """Evaluate every grid point (typically a cross-validation each)."""
    rows = []
    for point in grid_points(grid):
        report = evaluate(point)
        rows.append(SweepRow(point, report.means()))
    return SweepResult(rows)
