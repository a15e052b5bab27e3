"""Command-line entry point: ``qaprf <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from typing import Sequence

from . import synth
from .config import ConfigError, RunConfig, parse_grid, resolve
from .corpus import IngestError, PreprocessConfig, load_corpus, load_queries
from .embed import EmbeddingError, EmbeddingTable, load_embeddings
from .evaluation import (
    EvaluationError,
    attach_baseline,
    cross_validate,
    evaluate_runs,
    load_qrels,
    sweep,
)
from .expand import (
    LabelError,
    LabelTable,
    Pipeline,
    expand_and_retrieve,
    generate_labels,
    label_fingerprint,
    pointer_examples,
    ranker_data,
    write_report,
)
from .index import InvertedIndex, load_index, read_run, retrieve, save_index, write_run
from .qa_net import PointerConfig, PointerModel, train_pointer
from .stat_rank import RankerModel, train_ranker

log = logging.getLogger("qaprf")


class UsageError(Exception):
    pass


# --- shared plumbing --------------------------------------------------------------------


def _require(cfg: RunConfig, *names: str) -> None:
    """Fail fast, before any heavy work, on missing or absent inputs."""
    for name in names:
        value = getattr(cfg, name)
        if not value:
            raise UsageError(f"missing required input: --{name.replace('_', '-')}")


def _check_exists(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg, name)
        if value and not os.path.exists(value):
            raise UsageError(f"--{name.replace('_', '-')}: no such file: {value}")


def _need_source(cfg: RunConfig) -> None:
    if not cfg.index and not cfg.corpus:
        raise UsageError("missing required input: --corpus or --index")
    _check_exists(cfg, "index", "corpus", "stopwords")


def _preprocess(cfg: RunConfig) -> PreprocessConfig:
    pre = PreprocessConfig()
    return pre.with_stopword_file(cfg.stopwords) if cfg.stopwords else pre


def _load_index(cfg: RunConfig) -> InvertedIndex:
    if cfg.index:
        return load_index(cfg.index)
    return InvertedIndex(load_corpus(cfg.corpus, _preprocess(cfg)), cfg.k1, cfg.b)


def _load_queries(cfg: RunConfig, index: InvertedIndex):
    return load_queries(cfg.queries, index.corpus.config)


def _embeddings(cfg: RunConfig, index: InvertedIndex) -> EmbeddingTable:
    if cfg.embeddings:
        return load_embeddings(cfg.embeddings, index.corpus.vocab, seed=cfg.seed)
    return EmbeddingTable.random(index.corpus.vocab, cfg.dim, seed=cfg.seed)


def _labels(cfg: RunConfig, index, queries, judgments) -> LabelTable:
    """Reuse the label cache when its content hash matches, else rebuild it."""
    exp = cfg.expansion()
    judged = [q for q in queries if q.query_id in judgments]
    fp = label_fingerprint(index, judgments, judged, exp)
    if cfg.labels and os.path.exists(cfg.labels):
        try:
            return LabelTable.load(cfg.labels, expect_fingerprint=fp)
        except LabelError as exc:
            log.info("%s; regenerating", exc)
    table = generate_labels(judged, index, judgments, exp, cfg.threads)
    if cfg.labels:
        table.save(cfg.labels)
    return table


def _write_text(path: str, text: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- subcommands ------------------------------------------------------------------------


def cmd_index(cfg: RunConfig) -> int:
    _require(cfg, "corpus")
    _check_exists(cfg, "corpus", "stopwords")
    index = InvertedIndex(load_corpus(cfg.corpus, _preprocess(cfg)), cfg.k1, cfg.b)
    if cfg.out:
        save_index(cfg.out, index)
    v = index.corpus.vocab
    print(f"C={v.num_docs} vocab={len(v)} avg_len={v.avg_len:.6f}")
    return 0


def cmd_labels(cfg: RunConfig) -> int:
    _need_source(cfg)
    _require(cfg, "queries", "qrels", "labels")
    _check_exists(cfg, "queries", "qrels")
    index = _load_index(cfg)
    queries = _load_queries(cfg, index)
    judgments = load_qrels(cfg.qrels)
    table = _labels(cfg, index, queries, judgments)
    print(f"labels: {sum(len(r) for r in table.rows.values())} rows for {len(table.rows)} queries")
    return 0


def cmd_train_pointer(cfg: RunConfig) -> int:
    _need_source(cfg)
    _require(cfg, "queries", "qrels", "pointer")
    _check_exists(cfg, "queries", "qrels", "embeddings")
    index = _load_index(cfg)
    queries = _load_queries(cfg, index)
    judgments = load_qrels(cfg.qrels)
    emb = _embeddings(cfg, index)
    table = _labels(cfg, index, queries, judgments)
    examples = pointer_examples(queries, index, table, cfg.expansion(), cfg.max_len)
    model = PointerModel.initialize(PointerConfig(dim=emb.dim, heads=cfg.heads, max_len=cfg.max_len), seed=cfg.seed)
    model, trace = train_pointer(model, examples, emb, cfg.pointer_lr, cfg.pointer_epochs, cfg.seed)
    model.save(cfg.pointer)
    print(f"pointer: {len(examples)} examples, loss {trace[0]:.6f} -> {trace[-1]:.6f}")
    return 0


def cmd_train_ranker(cfg: RunConfig) -> int:
    _need_source(cfg)
    _require(cfg, "queries", "qrels", "ranker")
    _check_exists(cfg, "queries", "qrels")
    index = _load_index(cfg)
    queries = _load_queries(cfg, index)
    judgments = load_qrels(cfg.qrels)
    exp = cfg.expansion()
    table = _labels(cfg, index, queries, judgments)
    data = ranker_data(queries, index, table, exp)
    model = RankerModel.initialize(exp.feedback_docs + 2, cfg.ranker_hidden, seed=cfg.seed)
    model, trace = train_ranker(
        model, data, exp.expansion_terms, cfg.ranker_epochs, cfg.ranker_lr, cfg.pairs_per_query, cfg.seed
    )
    model.save(cfg.ranker)
    last = trace[-1] if trace else float("nan")
    print(f"ranker: {len(data)} queries, final batch loss {last:.6f}")
    return 0


def cmd_expand(cfg: RunConfig) -> int:
    _need_source(cfg)
    _require(cfg, "queries", "run")
    exp = cfg.expansion()
    if exp.gamma > 0.0 and exp.beta > 0.0:
        _require(cfg, "pointer")
    if exp.gamma < 1.0 and exp.beta > 0.0:
        _require(cfg, "ranker")
    _check_exists(cfg, "queries", "pointer", "ranker", "embeddings")
    index = _load_index(cfg)
    queries = _load_queries(cfg, index)
    pointer = PointerModel.load(cfg.pointer) if cfg.pointer and exp.gamma > 0.0 else None
    ranker = RankerModel.load(cfg.ranker) if cfg.ranker and exp.gamma < 1.0 else None
    emb = _embeddings(cfg, index) if pointer is not None else None
    results, runs = [], []
    for q in queries:
        res, rl = expand_and_retrieve(q, index, pointer, ranker, emb, exp)
        results.append(res)
        runs.append(rl)
    write_run(cfg.run, runs)
    if cfg.report:
        write_report(cfg.report, results)
    flagged = sum(r.no_prf for r in results)
    print(f"expanded {len(queries)} queries ({flagged} without feedback)")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "run", "qrels")
    _check_exists(cfg, "run", "qrels", "baseline")
    runs = read_run(cfg.run)
    judgments = load_qrels(cfg.qrels)
    prof = cfg.profile
    report = evaluate_runs(runs, judgments, prof["depth"], prof["k"])
    if cfg.baseline:
        base = read_run(cfg.baseline)
        missing = sorted(set(runs) - set(base))
        if missing:
            raise UsageError(f"baseline run lacks queries: {', '.join(missing[:5])}")
        attach_baseline(report, evaluate_runs({q: base[q] for q in runs}, judgments, prof["depth"], prof["k"]))
    _write_text(cfg.out, report.to_tsv())
    return 0


def cmd_sweep(cfg: RunConfig, grid_specs: Sequence[str]) -> int:
    _need_source(cfg)
    _require(cfg, "queries", "qrels")
    _check_exists(cfg, "queries", "qrels", "embeddings")
    if not grid_specs:
        raise UsageError("missing required input: --grid")
    grid = parse_grid(list(grid_specs))
    index = _load_index(cfg)
    queries = _load_queries(cfg, index)
    judgments = load_qrels(cfg.qrels)
    emb = _embeddings(cfg, index)
    pipe = Pipeline(index, queries, judgments, emb, cfg.training(), cfg.threads)
    prof = cfg.profile
    baseline = {q.query_id: retrieve(index, q, prof["depth"]) for q in queries}

    def evaluate(point):
        exp = cfg.with_values(point).expansion()
        cv = cross_validate(queries, judgments, pipe.factory(exp), cfg.folds, cfg.seed, prof["depth"], prof["k"], baseline)
        return cv.pooled

    result = sweep(grid, evaluate)
    _write_text(cfg.out, result.to_tsv())
    return 0


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "out")
    sc = synth.SynthConfig(seed=cfg.seed, dim=cfg.dim)
    if args.topics is not None:
        sc = replace(sc, topics=args.topics)
    if args.vocab_size is not None:
        sc = replace(sc, filler_vocab=args.vocab_size)
    if args.docs is not None:
        sc = replace(sc, background=max(0, args.docs - (sc.num_docs - sc.background)))
    data = synth.generate(sc)
    checks = synth.verify(data, beta=cfg.beta, depth=cfg.profile["depth"])
    bad = [q for q, (dp, dd) in checks.items() if not (dp > 0 and dd <= dp)]
    if bad:
        log.warning("planted term fails the oracle check for %d queries: %s", len(bad), ", ".join(bad[:5]))
    paths = synth.write(data, cfg.out, checks)
    print(f"synth: {len(data.docs)} docs, {len(data.queries)} queries -> {paths['corpus']}")
    return 0


# --- argument parsing -------------------------------------------------------------------

_PATH_FLAGS = (
    "corpus", "index", "queries", "qrels", "embeddings", "stopwords", "labels",
    "pointer", "ranker", "run", "baseline", "report", "out",
)
_NUM_FLAGS = {
    "feedback-docs": int, "expansion-terms": int, "beta": float, "gamma": float, "alpha": float,
    "dim": int, "heads": int, "pointer-epochs": int, "pointer-lr": float, "ranker-hidden": int,
    "ranker-epochs": int, "ranker-lr": float, "pairs-per-query": int, "max-len": int, "folds": int,
    "k1": float, "b": float,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key=value configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--mode", choices=("full", "short"), default=None)
    common.add_argument("-v", "--verbose", action="store_true")
    for name in _PATH_FLAGS:
        common.add_argument(f"--{name}", default=None)
    for name, typ in _NUM_FLAGS.items():
        common.add_argument(f"--{name}", type=typ, default=None)
    common.add_argument("-M", dest="feedback_docs", type=int, default=None, help="feedback documents")
    common.add_argument("-N", dest="expansion_terms", type=int, default=None, help="expansion terms")

    parser = argparse.ArgumentParser(prog="qaprf", description="Pseudo-relevance feedback query expansion")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("index", "labels", "train-pointer", "train-ranker", "expand", "eval"):
        sub.add_parser(name, parents=[common])
    sw = sub.add_parser("sweep", parents=[common])
    sw.add_argument("--grid", action="append", default=[], help="e.g. beta=0,0.1 (repeatable)")
    sy = sub.add_parser("synth", parents=[common])
    sy.add_argument("--docs", type=int, default=None, help="target document count")
    sy.add_argument("--topics", type=int, default=None)
    sy.add_argument("--vocab-size", type=int, default=None)
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "grid", "docs", "topics", "vocab_size"}


# paths each subcommand may write; their parent directories are created on demand
_OUTPUTS = {
    "index": ("out",),
    "labels": ("labels",),
    "train-pointer": ("labels", "pointer"),
    "train-ranker": ("labels", "ranker"),
    "expand": ("run", "report"),
    "eval": ("out",),
    "sweep": ("out",),
}


def _make_parents(cfg: RunConfig, command: str) -> None:
    for name in _OUTPUTS.get(command, ()):
        path = getattr(cfg, name)
        if path and os.path.dirname(path):
            os.makedirs(os.path.dirname(path), exist_ok=True)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    try:
        cfg = resolve(args.config, flags)
        _make_parents(cfg, args.command)
        handlers = {
            "index": lambda: cmd_index(cfg),
            "labels": lambda: cmd_labels(cfg),
            "train-pointer": lambda: cmd_train_pointer(cfg),
            "train-ranker": lambda: cmd_train_ranker(cfg),
            "expand": lambda: cmd_expand(cfg),
            "eval": lambda: cmd_eval(cfg),
            "sweep": lambda: cmd_sweep(cfg, args.grid),
            "synth": lambda: cmd_synth(cfg, args),
        }
        return handlers[args.command]()
    except (UsageError, ConfigError, IngestError, EmbeddingError, EvaluationError, LabelError, ValueError, OSError) as exc:
        print(f"qaprf {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
