"""Dense tensors with reverse-mode automatic differentiation.

Small closed op set sufficient for the graph-augmented encoder, the prompt
encoder, and the contrastive loss. Everything is float64 numpy under the
hood; shapes are mostly 2-D matrices, scalars are shape (1, 1).
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf", backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"


def constant(data):
    return Tensor(data, requires_grad=False)


def parameter(data):
    return Tensor(data, requires_grad=True)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor):
    """Populate .grad on every tensor reachable from `loss`.

    Rejects non-scalar losses. Topological order is computed iteratively so
    deep op chains do not hit the recursion limit.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo, visited = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    bd = b.data.T if transpose_b else b.data
    if a.data.ndim != 2 or bd.ndim != 2 or a.data.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}"
                         f"{' (transposed)' if transpose_b else ''}")
    out = Tensor(a.data @ bd, parents=(a, b), op="matmul")

    def _bw(g):
        _accum(a, g @ bd.T)
        if transpose_b:
            _accum(b, g.T @ a.data)
        else:
            _accum(b, a.data.T @ g)

    out._backward = _bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} + {b.data.shape}")
    out = Tensor(data, parents=(a, b), op="add")

    def _bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    out._backward = _bw
    return out


def multiply(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"multiply: incompatible shapes {a.data.shape} * {b.data.shape}")
    out = Tensor(data, parents=(a, b), op="multiply")

    def _bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = _bw
    return out


def concat_rows(tensors) -> Tensor:
    tensors = list(tensors)
    widths = {t.data.shape[1] for t in tensors}
    if len(widths) != 1:
        raise ShapeError(f"concat-rows: mismatched widths {sorted(widths)}")
    out = Tensor(np.vstack([t.data for t in tensors]), parents=tuple(tensors), op="concat-rows")

    def _bw(g):
        start = 0
        for t in tensors:
            n = t.data.shape[0]
            _accum(t, g[start:start + n])
            start += n

    out._backward = _bw
    return out


def mean_rows(a: Tensor) -> Tensor:
    n = a.data.shape[0]
    out = Tensor(a.data.mean(axis=0, keepdims=True), parents=(a,), op="mean-rows")

    def _bw(g):
        _accum(a, np.repeat(g / n, n, axis=0))

    out._backward = _bw
    return out


def softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y, parents=(a,), op="softmax-rows")

    def _bw(g):
        _accum(a, (g - (g * y).sum(axis=1, keepdims=True)) * y)

    out._backward = _bw
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, parents=(a,), op="tanh")

    def _bw(g):
        _accum(a, g * (1.0 - y * y))

    out._backward = _bw
    return out


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    y = np.where(a.data > 0, a.data, slope * a.data)
    out = Tensor(y, parents=(a,), op="leaky-relu")

    def _bw(g):
        _accum(a, g * np.where(a.data > 0, 1.0, slope))

    out._backward = _bw
    return out


def layer_norm_rows(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization to zero mean / unit variance (no affine part)."""
    mu = a.data.mean(axis=1, keepdims=True)
    var = a.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = Tensor(y, parents=(a,), op="layer-norm")

    def _bw(g):
        gm = g.mean(axis=1, keepdims=True)
        gym = (g * y).mean(axis=1, keepdims=True)
        _accum(a, inv * (g - gm - y * gym))

    out._backward = _bw
    return out


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding-lookup: ids must be 1-D, got shape {ids.shape}")
    out = Tensor(table.data[ids], parents=(table,), op="embedding-lookup")

    def _bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accum(table, gt)

    out._backward = _bw
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop], parents=(a,), op="slice-rows")

    def _bw(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        _accum(a, ga)

    out._backward = _bw
    return out


def scalar_divide(a: Tensor, s: float) -> Tensor:
    if s == 0:
        raise ShapeError("scalar-divide: division by zero")
    out = Tensor(a.data / s, parents=(a,), op="scalar-divide")

    def _bw(g):
        _accum(a, g / s)

    out._backward = _bw
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two same-size tensors, returned as a (1, 1) scalar."""
    if a.data.size != b.data.size:
        raise ShapeError(f"dot: size mismatch {a.data.shape} . {b.data.shape}")
    out = Tensor(np.array([[(a.data.ravel() @ b.data.ravel()).item()]]),
                 parents=(a, b), op="dot")

    def _bw(g):
        s = np.asarray(g).item()
        _accum(a, s * b.data.reshape(a.data.shape))
        _accum(b, s * a.data.reshape(b.data.shape))

    out._backward = _bw
    return out


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y, parents=(a,), op="exp")

    def _bw(g):
        _accum(a, g * y)

    out._backward = _bw
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), parents=(a,), op="log")

    def _bw(g):
        _accum(a, g / a.data)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, leaves, eps: float = 1e-5) -> float:
    """Compare analytic gradients of `fn()` against central finite differences.

    `fn` must rebuild a scalar-valued graph from the current values of the
    leaf tensors each time it is called. Returns the max over all leaf
    coordinates of |analytic - numeric| / max(1, |numeric|); non-finite
    values anywhere give +inf.
    """
    leaves = list(leaves)
    for t in leaves:
        t.zero_grad()
    out = fn()
    backward(out)
    if not np.isfinite(out.data).all():
        return float("inf")
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]

    worst = 0.0
    for t, ga in zip(leaves, analytic):
        flat = t.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn().data.item()
            flat[i] = orig - eps
            fm = fn().data.item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            if not (np.isfinite(num) and np.isfinite(ga.ravel()[i])):
                return float("inf")
            err = abs(ga.ravel()[i] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    return worst
