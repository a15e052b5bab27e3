"""Backend selection for the scoring kernels.

The compiled extension is used when it was built and ``QAPRF_PURE_PYTHON``
is unset; otherwise the numpy implementation is loaded. Both expose
``accumulate``, ``topk`` and ``ranked_dcg`` with identical semantics.
"""

import os

from . import _kernels_py as python_backend

compiled_backend = None
if not os.environ.get("QAPRF_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "cython" if backend is compiled_backend else "python"

accumulate = backend.accumulate
topk = backend.topk
ranked_dcg = backend.ranked_dcg
