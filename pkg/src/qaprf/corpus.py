"""Text preprocessing, document/query ingest and collection statistics."""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from nltk.stem.porter import PorterStemmer

# nltk's English stopword list
ENGLISH_STOPWORDS = frozenset("""
i me my myself we our ours ourselves you you're you've you'll you'd your yours
yourself yourselves he him his himself she she's her hers herself it it's its
itself they them their theirs themselves what which who whom this that that'll
these those am is are was were be been being have has had having do does did
doing a an the and but if or because as until while of at by for with about
against between into through during before after above below to from up down
in out on off over under again further then once here there when where why how
all any both each few more most other some such no nor not only own same so
than too very s t can will just don don't should should've now d ll m o re ve
y ain aren aren't couldn couldn't didn didn't doesn doesn't hadn hadn't hasn
hasn't haven haven't isn isn't ma mightn mightn't mustn mustn't needn needn't
shan shan't shouldn shouldn't wasn wasn't weren weren't won won't wouldn
wouldn't
""".split())


class IngestError(ValueError):
    """Malformed input text, file or document stream."""


@dataclass(frozen=True)
class PreprocessConfig:
    stopwords: frozenset = ENGLISH_STOPWORDS
    stemmer: str = "porter"  # "porter" | "identity"
    lowercase: bool = True

    def __post_init__(self):
        if self.stemmer not in ("porter", "identity"):
            raise ValueError(f"unknown stemmer {self.stemmer!r}")
        object.__setattr__(self, "stopwords", frozenset(w.lower() for w in self.stopwords))

    def with_stopword_file(self, path) -> "PreprocessConfig":
        extra = read_stopwords(path)
        return PreprocessConfig(self.stopwords | extra, self.stemmer, self.lowercase)

    def describe(self) -> str:
        return f"stemmer={self.stemmer} lowercase={int(self.lowercase)} stopwords={len(self.stopwords)}"


def read_stopwords(path) -> frozenset:
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            w = line.strip()
            if w:
                words.add(w.lower())
    return frozenset(words)


_porter = PorterStemmer()


@lru_cache(maxsize=1 << 18)
def _stem(token: str) -> str:
    if not token.isascii():
        return token
    return _porter.stem(token, to_lowercase=False)


def _strip_punctuation(text: str) -> str:
    # anything outside letter / digit / whitespace becomes a separator
    out = []
    for ch in text:
        if ch.isspace():
            out.append(" ")
        else:
            cat = unicodedata.category(ch)
            out.append(ch if cat[0] in "LN" else " ")
    return "".join(out)


def tokenize(text: str | bytes, config: PreprocessConfig = PreprocessConfig()) -> list[str]:
    """Lowercase, strip punctuation, drop stopwords, then stem."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise IngestError(f"invalid UTF-8 at byte offset {exc.start}") from None
    if config.lowercase:
        text = text.lower()
    tokens = []
    for tok in _strip_punctuation(text).split():
        if tok.lower() in config.stopwords:
            continue
        if config.stemmer == "porter":
            tok = _stem(tok)
        tokens.append(tok)
    return tokens


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: np.ndarray  # int32 term ids, read-only

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])

    def tf(self, term_id: int) -> int:
        return int(np.count_nonzero(self.tokens == term_id))


@dataclass(frozen=True)
class Query:
    query_id: str
    terms: tuple[str, ...]

    def __post_init__(self):
        if not self.terms:
            raise IngestError(f"query {self.query_id!r} is empty after preprocessing")

    def tf(self, term: str) -> int:
        return self.terms.count(term)

    def counts(self) -> Counter:
        return Counter(self.terms)

    def __len__(self):
        return len(self.terms)


def term_frequency(holder: Document | Query, w) -> int:
    """Occurrences of ``w`` (term id for documents, term string for queries)."""
    return holder.tf(w)


class Vocabulary:
    """Bidirectional term <-> id map plus document frequencies.

    Ids are assigned in first-occurrence order of the ingest stream.
    """

    def __init__(self, terms: Sequence[str], df: np.ndarray, num_docs: int, total_length: int):
        self._terms = tuple(terms)
        self._ids = {t: i for i, t in enumerate(self._terms)}
        self.df = df
        self.df.setflags(write=False)
        self.num_docs = num_docs
        self.total_length = total_length
        self.avg_len = total_length / num_docs if num_docs else 0.0

    def __len__(self):
        return len(self._terms)

    def __contains__(self, term):
        return term in self._ids

    def id(self, term: str) -> int:
        return self._ids[term]

    def get(self, term: str, default=None):
        return self._ids.get(term, default)

    def term(self, term_id: int) -> str:
        return self._terms[term_id]

    @property
    def terms(self) -> tuple[str, ...]:
        return self._terms

    def doc_freq(self, term: str) -> int:
        i = self._ids.get(term)
        return 0 if i is None else int(self.df[i])


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    vocab: Vocabulary
    config: PreprocessConfig = field(default_factory=PreprocessConfig)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {d.doc_id: i for i, d in enumerate(self.documents)})

    def __len__(self):
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def index_of(self, doc_id: str) -> int:
        return self._by_id[doc_id]

    def get(self, doc_id: str) -> Document:
        return self.documents[self._by_id[doc_id]]

    def doc_terms(self, doc: Document) -> list[str]:
        return [self.vocab.term(int(t)) for t in doc.tokens]

    def make_query(self, query_id: str, text: str) -> Query:
        return Query(query_id, tuple(tokenize(text, self.config)))


def build_corpus(doc_stream: Iterable[tuple[str, str]], config: PreprocessConfig = PreprocessConfig()) -> Corpus:
    """Tokenize a stream of ``(doc_id, text)`` pairs into an immutable corpus."""
    ids: dict[str, int] = {}
    terms: list[str] = []
    df: list[int] = []
    docs = []
    seen = set()
    total = 0
    for doc_id, text in doc_stream:
        if doc_id in seen:
            raise IngestError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        toks = tokenize(text, config)
        arr = np.empty(len(toks), dtype=np.int32)
        for k, t in enumerate(toks):
            i = ids.get(t)
            if i is None:
                i = ids[t] = len(terms)
                terms.append(t)
                df.append(0)
            arr[k] = i
        for i in np.unique(arr):
            df[i] += 1
        arr.setflags(write=False)
        docs.append(Document(doc_id, arr))
        total += len(toks)
    vocab = Vocabulary(terms, np.asarray(df, dtype=np.int64), len(docs), total)
    return Corpus(tuple(docs), vocab, config)


def corpus_from_tokens(docs: Iterable[tuple[str, Sequence[str]]], config: PreprocessConfig = PreprocessConfig()) -> Corpus:
    """Build a corpus from already-preprocessed token lists (no re-tokenizing)."""
    passthrough = PreprocessConfig(frozenset(), "identity", False)
    corpus = build_corpus(((i, " ".join(t)) for i, t in docs), passthrough)
    return Corpus(corpus.documents, corpus.vocab, config)


def read_tsv_records(path) -> Iterator[tuple[str, str]]:
    """Yield ``(id, text)`` from a UTF-8 ``id<TAB>text`` file; ``#`` lines skipped."""
    offset = 0
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, 1):
            start = offset
            offset += len(raw)
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise IngestError(f"{path}: invalid UTF-8 at byte offset {start + exc.start} (line {lineno})") from None
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            rid, sep, text = line.partition("\t")
            if not sep:
                raise IngestError(f"{path}:{lineno}: expected id<TAB>text")
            yield rid, text


def load_corpus(path, config: PreprocessConfig = PreprocessConfig()) -> Corpus:
    return build_corpus(read_tsv_records(path), config)


def load_queries(path, config: PreprocessConfig = PreprocessConfig()) -> list[Query]:
    queries = []
    seen = set()
    for qid, text in read_tsv_records(path):
        if qid in seen:
            raise IngestError(f"{path}: duplicate query_id {qid!r}")
        seen.add(qid)
        queries.append(Query(qid, tuple(tokenize(text, config))))
    return queries
