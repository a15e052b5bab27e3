"""Numpy fallback for the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def accumulate(scores, docs, tfs, norms, weight, idf, k1p1):
    scores[docs] += weight * (idf * ((tfs * k1p1) / (tfs + norms[docs])))


def topk(scores, tie_rank, k):
    cand = np.flatnonzero(scores > 0.0)
    order = np.lexsort((tie_rank[cand], -scores[cand]))
    return cand[order[:k]].astype(np.int64)


def ranked_dcg(scores, tie_rank, gains, discounts, depth):
    top = topk(scores, tie_rank, depth)
    if top.size == 0:
        return 0.0
    # cumsum is strictly sequential, matching the compiled loop
    return float(np.cumsum(gains[top] * discounts[: top.size])[-1])
