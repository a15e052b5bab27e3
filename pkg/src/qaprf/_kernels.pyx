# distutils: language = c++
# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scoring kernels.

Arithmetic order matches ``_kernels_py`` term by term so both backends
produce bit-identical scores and rankings.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libcpp.algorithm cimport partial_sort, sort

cnp.import_array()


ctypedef struct Cand:
    double score
    long long rank
    long long idx


cdef inline bint _before(const Cand& a, const Cand& b) noexcept nogil:
    if a.score != b.score:
        return a.score > b.score
    return a.rank < b.rank


def accumulate(double[::1] scores, const int[::1] docs, const double[::1] tfs,
               const double[::1] norms, double weight, double idf, double k1p1):
    """Add ``weight * idf * tf*(k1+1)/(tf + norm)`` for one postings list."""
    cdef Py_ssize_t i, n = docs.shape[0]
    cdef int d
    cdef double tf
    with nogil:
        for i in range(n):
            d = docs[i]
            tf = tfs[i]
            scores[d] += weight * (idf * ((tf * k1p1) / (tf + norms[d])))


cdef Py_ssize_t _select(const double[::1] scores, const long long[::1] tie_rank,
                        Py_ssize_t k, Cand* buf) noexcept nogil:
    cdef Py_ssize_t i, m = 0, n = scores.shape[0]
    for i in range(n):
        if scores[i] > 0.0:
            buf[m].score = scores[i]
            buf[m].rank = tie_rank[i]
            buf[m].idx = i
            m += 1
    # tie_rank is unique, so the order is total and the sort need not be stable
    if k < m:
        partial_sort(buf, buf + k, buf + m, _before)
        return k
    sort(buf, buf + m, _before)
    return m


def topk(const double[::1] scores, const long long[::1] tie_rank, Py_ssize_t k):
    """Indices of the ``k`` best positive scores, ties by ascending ``tie_rank``."""
    cdef Py_ssize_t n = scores.shape[0], m, i
    cdef long long[::1] view
    cdef Cand* buf = <Cand*>malloc((n if n > 0 else 1) * sizeof(Cand))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            m = _select(scores, tie_rank, k, buf)
        out = np.empty(m, dtype=np.int64)
        view = out
        for i in range(m):
            view[i] = buf[i].idx
        return out
    finally:
        free(buf)


def ranked_dcg(const double[::1] scores, const long long[::1] tie_rank,
               const double[::1] gains, const double[::1] discounts, Py_ssize_t depth):
    """DCG of the ranking induced by ``scores`` cut at ``depth``."""
    cdef Py_ssize_t n = scores.shape[0], m, r
    cdef double total = 0.0
    cdef Cand* buf = <Cand*>malloc((n if n > 0 else 1) * sizeof(Cand))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            m = _select(scores, tie_rank, depth, buf)
            for r in range(m):
                total += gains[buf[r].idx] * discounts[r]
        return total
    finally:
        free(buf)
