"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable primitive used by the graph layers lives here.  A
result tensor keeps a reference to the :class:`TapeNode` that produced it;
``Tensor.backward`` replays the reachable nodes in exact reverse recording
order and accumulates ``.grad`` on leaves that asked for it.
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

DTYPE = np.float64
DEFAULT_SLOPE = 0.2

_seq = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    pass


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


def _active_tapes() -> list:
    tapes = getattr(_state, "tapes", None)
    if tapes is None:
        tapes = _state.tapes = []
    return tapes


@contextmanager
def no_grad():
    """Disable recording for the enclosed block."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class TapeNode:
    __slots__ = ("seq", "op", "inputs", "output", "backward_fn", "__weakref__")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable):
        self.seq = next(_seq)
        self.op = op
        self.inputs = inputs
        self.output = 0  # id() of the produced tensor; no back-reference, so no cycle
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of the operations executed inside a ``with`` block.

    Recording into a Tape is optional; gradients flow through the node
    references held by tensors either way.  The tape is useful to inspect
    what a forward pass did and to run ``backward`` from it.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self):
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes().remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: "Tensor"):
        loss.backward()
        self.nodes.clear()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: TapeNode | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def dump(self) -> str:
        """Flat text dump used for debugging: shape line then values."""
        head = "x".join(str(s) for s in self.shape) or "scalar"
        return head + "\n" + " ".join(repr(float(v)) for v in self.data.reshape(-1))

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if self._node is None:
            if self.requires_grad:
                self.grad = grad.copy() if self.grad is None else self.grad + grad
            return

        # Collect reachable nodes, then replay by descending sequence number,
        # i.e. exact reverse recording order.
        nodes: dict[int, TapeNode] = {}
        stack = [self._node]
        while stack:
            node = stack.pop()
            if node.seq in nodes:
                continue
            nodes[node.seq] = node
            for t in node.inputs:
                if t._node is not None and t._node.seq not in nodes:
                    stack.append(t._node)

        grads: dict[int, np.ndarray] = {id(self): grad}
        for seq in sorted(nodes, reverse=True):
            node = nodes.pop(seq)
            g = grads.pop(node.output, None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, gt in zip(node.inputs, in_grads):
                if gt is None or not _needs_grad(t):
                    continue
                if gt.shape != t.shape:
                    raise ShapeError(f"{node.op}: gradient shape {gt.shape} != input shape {t.shape}")
                if t._node is None:
                    t.grad = gt.copy() if t.grad is None else t.grad + gt
                else:
                    prev = grads.get(id(t))
                    grads[id(t)] = gt if prev is None else prev + gt
            # consumed: drop the closure and inputs so intermediates can be freed
            node.backward_fn = _consumed
            node.inputs = ()

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _consumed(g):
    raise RuntimeError("tape already consumed by an earlier backward()")


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._node is not None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._node = None
    out.name = None
    if getattr(_state, "enabled", True) and any(t.requires_grad or t._node is not None for t in inputs):
        node = TapeNode(op, tuple(inputs), backward_fn)
        node.output = id(out)
        out._node = node
        for tape in _active_tapes():
            tape.nodes.append(node)
    return out


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, "div", (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * x.data, "square", (x,), lambda g: (2.0 * g * x.data,))


def tabs(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.abs(x.data), "abs", (x,), lambda g: (g * np.sign(x.data),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, "exp", (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), "log", (x,), lambda g: (g / x.data,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _softplus(x: np.ndarray) -> np.ndarray:
    # x > 20: x + log1p(e^-x); x < -20: e^x; otherwise log1p(e^x)
    out = np.empty_like(x)
    hi = x > 20.0
    lo = x < -20.0
    mid = ~(hi | lo)
    out[hi] = x[hi] + np.log1p(np.exp(-x[hi]))
    out[lo] = np.exp(x[lo])
    out[mid] = np.log1p(np.exp(x[mid]))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x) -> Tensor:
    x = as_tensor(x)
    return _make(_softplus(x.data), "softplus", (x,), lambda g: (g * _sigmoid(x.data),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def mish(x) -> Tensor:
    """x * tanh(softplus(x))."""
    x = as_tensor(x)
    sp = _softplus(x.data)
    t = np.tanh(sp)
    out = x.data * t

    def backward(g):
        # d/dx = tanh(sp) + x * (1 - tanh^2(sp)) * sigmoid(x)
        return (g * (t + x.data * (1.0 - t * t) * _sigmoid(x.data)),)

    return _make(out, "mish", (x,), backward)


def leaky_relu(x, slope: float = DEFAULT_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    scale = np.where(x.data >= 0, 1.0, slope)
    return _make(x.data * scale, "leaky_relu", (x,), lambda g: (g * scale,))


def glu(x) -> Tensor:
    """Split the last axis into halves ``a, b`` and return ``a * sigmoid(b)``."""
    x = as_tensor(x)
    c2 = x.shape[-1]
    if c2 % 2:
        raise ShapeError(f"glu needs an even last dimension, got shape {x.shape}")
    c = c2 // 2
    a, b = x.data[..., :c], x.data[..., c:]
    s = _sigmoid(b)

    def backward(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=-1),)

    return _make(a * s, "glu", (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation and reductions
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _make(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim - 1, -1, -1))
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), "transpose", (x,),
                 lambda g: (np.transpose(g, inv),))


def swap_last(x) -> Tensor:
    axes = list(range(as_tensor(x).ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=DTYPE), "sum", (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat needs at least one part")
    if len(parts) == 1:
        return parts[0]
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise ShapeError(
                f"concat: non-concat dimensions differ, {ref} vs {p.shape} (axis={axis})"
            )
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(parts))
        )

    return _make(np.concatenate([p.data for p in parts], axis=ax), "concat", parts, backward)


def take(x, index, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; the gradient scatters back with addition."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    ax = axis % x.ndim

    if index.ndim == 1 and len(index) == x.shape[ax] and np.array_equal(index, np.arange(len(index))):
        return x

    def backward(g):
        if ax == 0:
            return (scatter_rows(g, index.reshape(-1), x.shape[0]).reshape(x.shape),)
        moved = scatter_rows(np.moveaxis(g, ax, 0), index.reshape(-1), x.shape[ax])
        return (np.moveaxis(moved, 0, ax),)

    return _make(np.take(x.data, index, axis=ax), "take", (x,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules on leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if b.ndim == 2 and a.ndim > 2:
            # shared weight: one flattened product instead of a per-row reduction
            ga = np.matmul(g, b.data.T)
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return _unbroadcast(ga, a.shape), gb
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, "matmul", (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as [out, in]."""
    y = matmul(x, swap_last(weight))
    return y if bias is None else add(y, bias)


def rowdot(a, b) -> Tensor:
    """Inner product over the last axis."""
    return tsum(mul(a, b), axis=-1)


# ---------------------------------------------------------------------------
# segment reductions (axis 0 is the segmented axis)
# ---------------------------------------------------------------------------

class _Segments:
    """Cached layout of one id vector: stable sort order and a CSR scatter matrix."""

    __slots__ = ("order", "starts", "present", "scatter")

    def __init__(self, ids: np.ndarray, n: int):
        self.order = np.argsort(ids, kind="stable")
        sorted_ids = ids[self.order]
        if ids.size:
            first = np.concatenate([[True], sorted_ids[1:] != sorted_ids[:-1]])
        else:
            first = np.zeros(0, dtype=bool)
        self.starts = np.flatnonzero(first)
        self.present = sorted_ids[self.starts]
        # CSR rows keep column order, so each segment accumulates rows in input order
        self.scatter = sparse.csr_matrix(
            (np.ones(ids.size), (ids, np.arange(ids.size))), shape=(n, ids.size))


_SEG_CACHE: "dict" = {}


def _segments(ids: np.ndarray, n: int) -> _Segments:
    key = (n, ids.size, ids.tobytes())
    hit = _SEG_CACHE.get(key)
    if hit is None:
        if len(_SEG_CACHE) > 64:
            _SEG_CACHE.clear()
        hit = _SEG_CACHE[key] = _Segments(ids, n)
    return hit


def scatter_rows(values: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    """``out[ids[i]] += values[i]`` for rows, accumulated in row order."""
    if values.shape[0] == 0:
        return np.zeros((n,) + values.shape[1:], dtype=DTYPE)
    seg = _segments(ids, n)
    flat = values.reshape(values.shape[0], -1)
    return np.asarray(seg.scatter @ flat).reshape((n,) + values.shape[1:])


def _check_ids(ids, n_rows: int, num_segments: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != (n_rows,):
        raise ShapeError(f"segment ids shape {ids.shape} does not match {n_rows} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        bad = ids[(ids < 0) | (ids >= num_segments)][0]
        raise IndexError(f"segment id {bad} out of range for {num_segments} segments")
    return ids


def segment_sum(values, segment_ids, num_segments: int) -> Tensor:
    """Sum rows into ``num_segments`` buckets.

    Rows are accumulated sequentially in the order given, so callers that
    list rows by ascending edge id get ascending-edge-id accumulation.
    Empty segments produce zero rows.
    """
    values = as_tensor(values)
    ids = _check_ids(segment_ids, values.shape[0], num_segments)
    out = scatter_rows(values.data, ids, num_segments)
    return _make(out, "segment_sum", (values,), lambda g: (g[ids],))


def _segment_max(x: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    seg = _segments(ids, n)
    m = np.full((n,) + x.shape[1:], -np.inf, dtype=DTYPE)
    if ids.size:
        m[seg.present] = np.maximum.reduceat(x[seg.order], seg.starts, axis=0)
    return m


def segment_softmax(scores, segment_ids, num_segments: int | None = None) -> Tensor:
    """Softmax of ``scores`` within each segment (rows sharing an id)."""
    scores = as_tensor(scores)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if num_segments is None:
        num_segments = int(ids.max()) + 1 if ids.size else 0
    ids = _check_ids(ids, scores.shape[0], num_segments)
    if not np.all(np.isfinite(scores.data)):
        raise FloatingPointError("segment_softmax received non-finite scores")
    m = _segment_max(scores.data, ids, num_segments)
    ex = np.exp(scores.data - m[ids])
    den = scatter_rows(ex, ids, num_segments)
    out = ex / den[ids]

    def backward(g):
        s = scatter_rows(g * out, ids, num_segments)
        return (out * (g - s[ids]),)

    return _make(out, "segment_softmax", (scores,), backward)


def segment_log_softmax(scores, segment_ids, num_segments: int | None = None) -> Tensor:
    scores = as_tensor(scores)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if num_segments is None:
        num_segments = int(ids.max()) + 1 if ids.size else 0
    ids = _check_ids(ids, scores.shape[0], num_segments)
    m = _segment_max(scores.data, ids, num_segments)
    ex = np.exp(scores.data - m[ids])
    den = scatter_rows(ex, ids, num_segments)
    out = scores.data - m[ids] - np.log(den[ids])
    soft = np.exp(out)

    def backward(g):
        s = scatter_rows(g, ids, num_segments)
        return (g - soft * s[ids],)

    return _make(out, "segment_log_softmax", (scores,), backward)


# ---------------------------------------------------------------------------
# temporal convolution
# ---------------------------------------------------------------------------

def conv1d_time(x, kernel) -> Tensor:
    """Valid 1-D convolution along axis 0.

    ``x`` is ``[T, ..., c_in]`` and ``kernel`` is ``[K, c_in, c_out]``; the
    same kernel is applied to every entity in the middle axes.  Output is
    ``[T-K+1, ..., c_out]`` with ``out[t] = sum_k x[t+k] @ kernel[k]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3:
        raise ShapeError(f"conv kernel must be [K, c_in, c_out], got {kernel.shape}")
    K, c_in, _ = kernel.shape
    T = x.shape[0]
    if x.shape[-1] != c_in:
        raise ShapeError(f"conv input channels {x.shape[-1]} != kernel c_in {c_in}")
    if T < K:
        raise ShapeError(f"conv1d_time needs T >= K, got T={T}, K={K}")
    Tp = T - K + 1
    out = sum(np.matmul(x.data[k:k + Tp], kernel.data[k]) for k in range(K))

    def backward(g):
        gx = np.zeros(x.shape, dtype=DTYPE)
        gk = np.zeros(kernel.shape, dtype=DTYPE)
        g2 = g.reshape(-1, g.shape[-1])
        for k in range(K):
            gx[k:k + Tp] += np.matmul(g, kernel.data[k].T)
            gk[k] = x.data[k:k + Tp].reshape(-1, c_in).T @ g2
        return gx, gk

    return _make(np.asarray(out, dtype=DTYPE), "conv1d_time", (x, kernel), backward)


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor] | Callable[[Tensor], Tensor], x, h: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``x`` is a Tensor or an iterable of Tensors.  With one tensor, ``f`` is
    called as ``f(x)``; with several, as ``f()`` (the closure is expected to
    read them).  Error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  ``max_coords``
    samples that many coordinates per tensor instead of all of them.
    """
    single = isinstance(x, Tensor)
    tensors = [x] if single else list(x)
    call = (lambda: f(x)) if single else f
    saved_flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    loss = call()
    if loss.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("grad_check: function value is not finite")
    loss.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    with no_grad():
        for t, ga in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                fp = call().item()
                flat[i] = orig - h
                fm = call().item()
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise FloatingPointError(f"grad_check: non-finite value at coordinate {i}")
                num = (fp - fm) / (2.0 * h)
                ana = ga.reshape(-1)[i]
                if not math.isfinite(ana):
                    raise FloatingPointError(f"grad_check: non-finite analytic gradient at {i}")
                err = abs(ana - num) / max(1.0, abs(ana), abs(num))
                worst = max(worst, err)
    for t, flag in zip(tensors, saved_flags):
        t.requires_grad = flag
        t.grad = None
    return worst


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))


def sum_squares(params: Iterable[Tensor]) -> Tensor:
    """Sum of squares of every tensor in ``params`` as a scalar."""
    total = None
    for p in params:
        s = tsum(square(p))
        total = s if total is None else add(total, s)
    return total if total is not None else Tensor(0.0)
