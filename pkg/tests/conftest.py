import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from qaprf.corpus import PreprocessConfig, build_corpus  # noqa: E402

# identity pipeline: tokens pass through untouched, so oracles can use raw splits
RAW = PreprocessConfig(frozenset(), "identity", False)


def random_docs(rng: np.random.Generator, n_docs: int, vocab_size: int = 30, lo: int = 1, hi: int = 12):
    vocab = [f"w{i}" for i in range(vocab_size)]
    # Zipf-ish skew so some terms are frequent and many are rare
    p = 1.0 / np.arange(1, vocab_size + 1)
    p /= p.sum()
    docs = []
    for i in range(n_docs):
        n = int(rng.integers(lo, hi + 1))
        docs.append((f"d{i:04d}", " ".join(vocab[j] for j in rng.choice(vocab_size, size=n, p=p))))
    return docs


def raw_tokens(docs):
    return [text.split() for _, text in docs]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_corpus():
    docs = [
        ("a", "apple banana apple"),
        ("b", "banana cherry"),
        ("c", "cherry date elder fig"),
        ("d", "apple"),
    ]
    return build_corpus(docs, RAW)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
