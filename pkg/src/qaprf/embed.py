"""Word vectors and sinusoidal positional encodings."""

from __future__ import annotations

import hashlib

import numpy as np

from .corpus import Vocabulary

DEFAULT_DIM = 64
OOV_SCALE = 0.1


class EmbeddingError(ValueError):
    pass


def oov_vector(term: str, dim: int, seed: int) -> np.ndarray:
    """Uniform[-0.1, 0.1] vector that is a pure function of (term, seed)."""
    digest = hashlib.blake2b(f"{seed}\x00{term}".encode("utf-8"), digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.uniform(-OOV_SCALE, OOV_SCALE, size=dim)


def positional_encoding(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    i2 = np.arange(0, dim, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / dim)
    pe = np.zeros((max_len, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe


class EmbeddingTable:
    """Vectors aligned with vocabulary ids; unknown strings fall back to
    seeded random vectors."""

    def __init__(self, vocab: Vocabulary, matrix: np.ndarray, seed: int = 0, known: frozenset = frozenset()):
        if matrix.shape[0] != len(vocab):
            raise EmbeddingError("embedding matrix does not cover the vocabulary")
        self.vocab = vocab
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float64)
        self.matrix.setflags(write=False)
        self.dim = int(matrix.shape[1])
        self.seed = seed
        self.known = known  # terms whose vectors came from a file

    @classmethod
    def random(cls, vocab: Vocabulary, dim: int = DEFAULT_DIM, seed: int = 0) -> "EmbeddingTable":
        m = np.empty((len(vocab), dim))
        for i, t in enumerate(vocab.terms):
            m[i] = oov_vector(t, dim, seed)
        return cls(vocab, m, seed)

    def vector(self, term: str) -> np.ndarray:
        i = self.vocab.get(term)
        if i is None:
            return oov_vector(term, self.dim, self.seed)
        return self.matrix[i]

    def vectors(self, terms) -> np.ndarray:
        if len(terms) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(t) for t in terms])

    def rows(self, term_ids) -> np.ndarray:
        return self.matrix[np.asarray(term_ids, dtype=np.int64)]


def load_embeddings(path, vocab: Vocabulary, seed: int = 0) -> EmbeddingTable:
    """Read ``term v1 .. vd`` lines (optional ``count dim`` header)."""
    found: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            parts = [p for p in parts if p]
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
                dim = int(parts[1])
                continue
            term, raw = parts[0], parts[1:]
            if dim is None:
                dim = len(raw)
            if len(raw) != dim:
                raise EmbeddingError(f"{path}:{lineno}: expected {dim} components, got {len(raw)}")
            try:
                vec = np.array([float(x) for x in raw])
            except ValueError:
                raise EmbeddingError(f"{path}:{lineno}: malformed float") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"{path}:{lineno}: non-finite component")
            if term in vocab:
                found[term] = vec
    if dim is None or dim < 1:
        raise EmbeddingError(f"{path}: no vectors found")
    m = np.empty((len(vocab), dim))
    for i, t in enumerate(vocab.terms):
        v = found.get(t)
        m[i] = v if v is not None else oov_vector(t, dim, seed)
    return EmbeddingTable(vocab, m, seed, frozenset(found))


def save_embeddings(path, table: EmbeddingTable, only_known: bool = False) -> None:
    terms = [t for t in table.vocab.terms if not only_known or t in table.known]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(terms)} {table.dim}\n")
        for t in terms:
            row = table.matrix[table.vocab.id(t)]
            fh.write(t + " " + " ".join(repr(float(x)) for x in row) + "\n")


def initial_embedding(table: EmbeddingTable, term_id: int, position: int, max_position: int = 256) -> np.ndarray:
    """Word vector plus the positional encoding at ``position``."""
    if not 0 <= position < max_position:
        raise EmbeddingError(f"position {position} outside [0, {max_position})")
    return table.matrix[term_id] + positional_encoding(position + 1, table.dim)[position]
