"""Small define-by-run reverse-mode autodiff over dense float64 arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them. ``backward`` orders the
recorded graph topologically and runs the closures once; afterwards the graph
is released, so a second backward through the same forward pass is an error.

Broadcasting is deliberately narrow: operands either have equal shapes or one
of them is a 0-d scalar.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import DimensionError, NumericError

DEFAULT_SLOPE = 0.2


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    out._released = False
    out._parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    # grads are never mutated in place, so sharing buffers is safe
    if t.grad is None:
        t.grad = np.asarray(g, dtype=np.float64).reshape(t.shape)
    else:
        t.grad = t.grad + np.reshape(g, t.shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar operand receives the summed gradient
    if t.data.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


class _SegmentIndex:
    """Precomputed scatter structure for one index array (sparse sum matrix, sort order)."""

    def __init__(self, seg: np.ndarray, n: int):
        e = len(seg)
        self.n = n
        self.scatter = sparse.csr_matrix((np.ones(e), (seg, np.arange(e))), shape=(n, e))
        self.order = np.argsort(seg, kind="stable")
        sorted_seg = seg[self.order]
        self.starts = np.flatnonzero(np.r_[True, sorted_seg[1:] != sorted_seg[:-1]]) if e else np.zeros(0, int)
        self.present = sorted_seg[self.starts] if e else np.zeros(0, int)

    def sum_rows(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self.scatter @ values)

    def max(self, values: np.ndarray) -> np.ndarray:
        out = np.full(self.n, -np.inf)
        if len(values):
            out[self.present] = np.maximum.reduceat(values[self.order], self.starts)
        return out


_INDEX_CACHE: dict = {}
_INDEX_CACHE_SIZE = 64


def _segment_index(seg: np.ndarray, n: int) -> _SegmentIndex:
    # keyed on the array object; the cache holds a reference so ids are not recycled
    key = (id(seg), n)
    hit = _INDEX_CACHE.get(key)
    if hit is not None and hit[0] is seg:
        return hit[1]
    idx = _SegmentIndex(seg, n)
    if len(_INDEX_CACHE) >= _INDEX_CACHE_SIZE:
        _INDEX_CACHE.pop(next(iter(_INDEX_CACHE)))
    _INDEX_CACHE[key] = (seg, idx)
    return idx


def _as_index(index) -> np.ndarray:
    # reuse caller arrays that are already int64 so the cache can hit
    if isinstance(index, np.ndarray) and index.dtype == np.int64:
        return index
    return np.asarray(index, dtype=np.int64)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = _result(a.data + b.data, (a, b), "add")

    def _bw(g):
        _accumulate(a, _reduce_to(g, a))
        _accumulate(b, _reduce_to(g, b))

    out._backward = _bw
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = _result(a.data - b.data, (a, b), "sub")

    def _bw(g):
        _accumulate(a, _reduce_to(g, a))
        _accumulate(b, _reduce_to(-g, b))

    out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = _result(a.data * b.data, (a, b), "mul")

    def _bw(g):
        _accumulate(a, _reduce_to(g * b.data, a))
        _accumulate(b, _reduce_to(g * a.data, b))

    out._backward = _bw
    return out


def square(a) -> Tensor:
    a = as_tensor(a)
    out = _result(a.data * a.data, (a,), "square")
    out._backward = lambda g: _accumulate(a, 2.0 * a.data * g)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    out = _result(y, (a,), "exp")
    out._backward = lambda g: _accumulate(a, g * y)
    return out


def leaky_relu(a, slope: float = DEFAULT_SLOPE) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    out = _result(a.data * factor, (a,), "leaky_relu")
    out._backward = lambda g: _accumulate(a, g * factor)
    return out


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # two-branch form, no overflow for large |x|
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid_np(a.data)
    out = _result(y, (a,), "sigmoid")
    out._backward = lambda g: _accumulate(a, g * y * (1.0 - y))
    return out


def softplus(a) -> Tensor:
    """log(1 + exp(x)), evaluated as max(x, 0) + log1p(exp(-|x|))."""
    a = as_tensor(a)
    y = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    out = _result(y, (a,), "softplus")
    out._backward = lambda g: _accumulate(a, g * _sigmoid_np(a.data))
    return out


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "exp": exp,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
}


def elementwise(op: str, *args, **kwargs) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


# ---------------------------------------------------------------- reductions / shape


def tsum(a) -> Tensor:
    a = as_tensor(a)
    out = _result(np.asarray(a.data.sum()), (a,), "sum")
    out._backward = lambda g: _accumulate(a, np.broadcast_to(g, a.shape))
    return out


def mean(a) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise DimensionError("mean of empty tensor")
    n = a.size
    out = _result(np.asarray(a.data.mean()), (a,), "mean")
    out._backward = lambda g: _accumulate(a, np.broadcast_to(g / n, a.shape))
    return out


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = _result(a.data.reshape(shape), (a,), "reshape")
    out._backward = lambda g: _accumulate(a, g.reshape(a.shape))
    return out


def take_rows(a, index) -> Tensor:
    """Gather ``a[index]`` along the first axis; backward scatter-adds."""
    a = as_tensor(a)
    index = _as_index(index)
    out = _result(a.data[index], (a,), "take_rows")

    def _bw(g):
        if not a.requires_grad:
            return
        if g.ndim == 1:
            _accumulate(a, np.bincount(index, weights=g, minlength=a.shape[0]))
        else:
            scat = _segment_index(index, a.shape[0])
            _accumulate(a, scat.sum_rows(g.reshape(len(index), -1)).reshape(a.shape))

    out._backward = _bw
    return out


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    out = _result(data, ts, "concat")

    def _bw(g):
        for t, piece in zip(ts, np.split(g, bounds, axis=axis)):
            _accumulate(t, piece)

    out._backward = _bw
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")

    def _bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    out._backward = _bw
    return out


# ---------------------------------------------------------------- segment ops


def _segment_ids(segments, length: int, n_segments: int | None) -> tuple[np.ndarray, int]:
    seg = _as_index(segments)
    if seg.shape != (length,):
        raise DimensionError(f"segments has shape {seg.shape}, expected ({length},)")
    if n_segments is None:
        n_segments = int(seg.max()) + 1 if length else 0
    if length and (seg.min() < 0 or seg.max() >= n_segments):
        raise DimensionError("segment id out of range")
    return seg, n_segments


def segment_softmax(scores, segments, n_segments: int | None = None) -> Tensor:
    """Softmax of ``scores`` computed separately inside each segment."""
    scores = as_tensor(scores)
    if scores.data.ndim != 1:
        raise DimensionError(f"segment_softmax expects 1-d scores, got {scores.shape}")
    seg, n = _segment_ids(segments, scores.shape[0], n_segments)
    gmax = _segment_index(seg, n).max(scores.data)
    z = np.exp(scores.data - gmax[seg])
    denom = np.bincount(seg, weights=z, minlength=n)
    y = z / denom[seg]
    out = _result(y, (scores,), "segment_softmax")

    def _bw(g):
        dot = np.bincount(seg, weights=g * y, minlength=n)
        _accumulate(scores, y * (g - dot[seg]))

    out._backward = _bw
    return out


def segment_weighted_sum(values, weights, segments, n_segments: int) -> Tensor:
    """Row ``i`` of the result is ``sum(weights[e] * values[e])`` over edges with segment ``i``."""
    values, weights = as_tensor(values), as_tensor(weights)
    if values.data.ndim != 2:
        raise DimensionError(f"values must be 2-d, got {values.shape}")
    n_edges = values.shape[0]
    if weights.shape != (n_edges,):
        raise DimensionError(f"weights shape {weights.shape} does not match {n_edges} edges")
    seg, n = _segment_ids(segments, n_edges, n_segments)
    contrib = values.data * weights.data[:, None]
    acc = _segment_index(seg, n).sum_rows(contrib)
    out = _result(acc, (values, weights), "segment_weighted_sum")

    def _bw(g):
        g_edge = g[seg]
        _accumulate(values, g_edge * weights.data[:, None])
        _accumulate(weights, np.einsum("ij,ij->i", g_edge, values.data))

    out._backward = _bw
    return out


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(output: Tensor) -> None:
    """Populate ``grad`` on every ``requires_grad`` tensor reachable from a scalar output."""
    if output.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if output._released:
        raise RuntimeError("graph already consumed by a previous backward pass")
    if not output.requires_grad:
        return
    if output._backward is None:
        _accumulate(output, np.ones(output.shape))
        return
    order = _topo_order(output)
    # intermediate grads are transient; leaves keep accumulating across passes
    for node in order:
        if node._backward is not None:
            node.grad = None
    output.grad = np.ones(output.shape)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._released = True
            node.grad = None


def parameters_grad(params: Iterable[Tensor]) -> list[np.ndarray]:
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
