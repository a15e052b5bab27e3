"""Textual tensor checkpoints.

Layout::

    <magic>
    key=value key=value ...
    tensor <name> <rows> <cols>
    <row 0 values>
    ...

Values are written with 17 significant digits so reading a file back gives
the identical float64 values.
"""

from __future__ import annotations

import numpy as np


class CheckpointError(ValueError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save(path, magic: str, hyper: dict, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(magic + "\n")
        fh.write(" ".join(f"{k}={v}" for k, v in hyper.items()) + "\n")
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype=np.float64)
            a2 = a.reshape(1, -1) if a.ndim == 1 else a
            if a2.ndim != 2:
                raise CheckpointError(f"tensor {name} must be 1-d or 2-d")
            rows, cols = a2.shape
            fh.write(f"tensor {name} {rows} {cols}\n")
            for row in a2:
                fh.write(" ".join(_fmt(x) for x in row) + "\n")


def load(path, magic: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0].strip() != magic:
        raise CheckpointError(f"{path}: expected magic {magic!r}")
    hyper = {}
    for tok in lines[1].split() if len(lines) > 1 else []:
        k, sep, v = tok.partition("=")
        if not sep:
            raise CheckpointError(f"{path}:2: bad hyper-parameter {tok!r}")
        hyper[k] = v
    tensors = {}
    i = 2
    while i < len(lines):
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        parts = line.split()
        if parts[0] != "tensor" or len(parts) != 4:
            raise CheckpointError(f"{path}:{i + 1}: expected 'tensor <name> <rows> <cols>'")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        data = np.empty((rows, cols))
        for r in range(rows):
            vals = lines[i + 1 + r].split()
            if len(vals) != cols:
                raise CheckpointError(f"{path}:{i + 2 + r}: expected {cols} values")
            data[r] = [float(v) for v in vals]
        tensors[name] = data
        i += 1 + rows
    return hyper, tensors
