"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the pointer network and the term ranker need are
provided. Every op records its parents and a closure that pushes the
output gradient back to them; :meth:`Tensor.backward` runs the closures in
reverse topological order.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = None

    shape = property(lambda self: self.data.shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad=None):
        order, seen = [], set()

        def visit(t):
            # iterative DFS; graphs here are a few hundred nodes deep
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # --- elementwise arithmetic -------------------------------------------------
    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def back(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(g, other.shape))

        out._backward = back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def back(g):
            self._accum(_unbroadcast(g * other.data, self.shape))
            other._accum(_unbroadcast(g * self.data, other.shape))

        out._backward = back
        return out

    __rmul__ = __mul__

    def __truediv__(self, scalar: float):
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data @ other.data, _parents=(self, other))

        def back(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        out._backward = back
        return out

    @property
    def T(self):
        out = Tensor(self.data.T, _parents=(self,))
        out._backward = lambda g: self._accum(g.T)
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], _parents=(self,))

        basic = all(isinstance(i, (slice, int)) for i in (idx if isinstance(idx, tuple) else (idx,)))

        def back(g):
            full = np.zeros_like(self.data)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            self._accum(full)

        out._backward = back
        return out

    # --- reductions ------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.shape).copy())

        out._backward = back
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int, keepdims=False):
        idx = np.argmax(self.data, axis=axis)
        val = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis)
        out = Tensor(val if keepdims else np.squeeze(val, axis), _parents=(self,))

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(self.data)
            np.put_along_axis(full, np.expand_dims(idx, axis), g, axis)
            self._accum(full)

        out._backward = back
        return out


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def param(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y, _parents=(x,))
    out._backward = lambda g: x._accum(g * (1.0 - y * y))
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), _parents=(x,))
    out._backward = lambda g: x._accum(g * mask)
    return out


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = stable_sigmoid(x.data)
    out = Tensor(y, _parents=(x,))
    out._backward = lambda g: x._accum(g * y * (1.0 - y))
    return out


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) without overflow."""
    out = Tensor(np.logaddexp(0.0, x.data), _parents=(x,))
    s = stable_sigmoid(x.data)
    out._backward = lambda g: x._accum(g * s)
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), _parents=(x,))
    out._backward = lambda g: x._accum(g / x.data)
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    out = Tensor(np.clip(x.data, lo, hi), _parents=(x,))
    out._backward = lambda g: x._accum(g * inside)
    return out


def softmax_array(z: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = softmax_array(x.data, axis)
    out = Tensor(y, _parents=(x,))

    def back(g):
        x._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    out._backward = back
    return out


def layer_norm_array(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    std = np.sqrt(var)
    safe = np.where(std > 0, std, 1.0)
    return np.where(std > 0, xc / safe, 0.0)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Row-wise standardization (no epsilon; constant rows map to 0) then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    std = np.sqrt(var)
    const = std == 0
    inv = np.where(const, 0.0, 1.0 / np.where(const, 1.0, std))
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, _parents=(x, gain, bias))
    d = x.data.shape[-1]

    def back(g):
        gain._accum(_unbroadcast(g * xhat, gain.shape))
        bias._accum(_unbroadcast(g, bias.shape))
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / d)
        x._accum(dx)

    out._backward = back
    return out


def concat(parts: list[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis), _parents=tuple(parts))
    bounds = np.cumsum([0] + [p.data.shape[axis] for p in parts])

    def back(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p._accum(g[tuple(sl)])

    out._backward = back
    return out


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    out = Tensor(table.data[ids], _parents=(table,))

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accum(full)

    out._backward = back
    return out


# --- finite differences ---------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-7) -> float:
    """``|a - n| / max(|a| + |n|, atol)`` in the Frobenius norm."""
    num = float(np.linalg.norm(analytic - numeric))
    den = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return num / max(den, atol)


def numeric_gradients(loss_fn, params: dict[str, Tensor], step: float = 1e-5) -> dict[str, np.ndarray]:
    out = {}
    for name, t in params.items():
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        out[name] = g
    return out
