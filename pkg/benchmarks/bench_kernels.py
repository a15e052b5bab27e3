"""Compare the compiled and numpy scoring kernels.

Runs each kernel on postings from the default synthetic corpus, then times
label generation (the retrieval-heavy stage) end to end under both backends
in separate processes.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--queries 20]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from qaprf import kernels, synth
from qaprf.corpus import build_corpus
from qaprf.index import InvertedIndex

LABEL_SCRIPT = """
import sys, time
from qaprf import kernels, synth
from qaprf.corpus import build_corpus
from qaprf.evaluation import load_qrels
from qaprf.expand import ExpansionConfig, generate_labels
from qaprf.index import InvertedIndex
data = synth.generate()
corpus = build_corpus(data.docs)
index = InvertedIndex(corpus)
queries = [corpus.make_query(q, t) for q, t in data.queries][: int(sys.argv[1])]
start = time.perf_counter()
generate_labels(queries, index, data.qrels, ExpansionConfig(), threads=1)
print(kernels.BACKEND_NAME, time.perf_counter() - start)
"""


def kernel_cases(index: InvertedIndex, rng: np.random.Generator):
    n = index.num_docs
    k1p1 = index.k1 + 1.0
    # the ten longest posting lists dominate retrieval cost
    lengths = np.diff(index.offsets)
    heavy = np.argsort(-lengths, kind="stable")[:10]
    scores = rng.random(n) * (rng.random(n) < 0.3)
    gains = rng.integers(0, 2, size=n).astype(np.float64)
    discounts = 1.0 / np.log2(np.arange(2, 1002))

    def accumulate(backend):
        out = np.zeros(n)
        for tid in heavy:
            lo, hi = index.offsets[tid], index.offsets[tid + 1]
            backend.accumulate(out, index.post_docs[lo:hi], index.post_tfs[lo:hi], index.norms, 0.5, float(index.idf[tid]), k1p1)

    return {
        "accumulate (10 postings)": accumulate,
        "topk (depth 1000)": lambda backend: backend.topk(scores, index.tie_rank, 1000),
        "ranked_dcg (depth 1000)": lambda backend: backend.ranked_dcg(scores, index.tie_rank, gains, discounts, 1000),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--queries", type=int, default=20)
    args = parser.parse_args()

    backends = {"python": kernels.python_backend}
    if kernels.compiled_backend is not None:
        backends["cython"] = kernels.compiled_backend
    else:
        print("compiled extension not built; timing the numpy backend only")

    index = InvertedIndex(build_corpus(synth.generate().docs))
    print(f"corpus: {index.num_docs} documents, {len(index.corpus.vocab)} terms")
    cases = kernel_cases(index, np.random.default_rng(0))
    print(f"\n{'kernel':<26}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {}
        for name, backend in backends.items():
            number = 200
            best = min(timeit.repeat(lambda: fn(backend), number=number, repeat=args.repeat))
            times[name] = best / number * 1e6
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<26}" + "".join(f"{t:>10.1f}us" for t in times.values()) + f"{speedup:>9.1f}x")

    print(f"\nlabel generation, {args.queries} queries (default expansion settings):")
    for name in backends:
        env = dict(os.environ)
        env.pop("QAPRF_PURE_PYTHON", None)
        if name == "python":
            env["QAPRF_PURE_PYTHON"] = "1"
        out = subprocess.run([sys.executable, "-c", LABEL_SCRIPT, str(args.queries)], env=env, check=True, capture_output=True, text=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:<8} {float(seconds):8.2f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
