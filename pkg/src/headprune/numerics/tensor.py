"""Dense float tensors with a recording tape for reverse-mode gradients.

Array arithmetic is delegated to NumPy. What this module owns is the tape
(an ordered list of operation records, each with a local gradient rule),
the straight-through node used by binary masks, and the multiply-accumulate
counter that instruments every matmul.

Tensors are f32 by default; building a graph from f64 tensors gives the
64-bit verification mode used by test oracles. Mixing the two in one
operation is an error rather than a silent promotion.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "matmul",
    "relu",
    "tanh",
    "softmax_rows",
    "layer_norm",
    "cross_entropy",
    "slice_last",
    "concat_last",
    "split_heads",
    "merge_heads",
    "swap_last2",
    "reshape",
    "straight_through",
    "mac_scope",
    "macs_enable",
    "macs_disable",
    "macs_read",
    "macs_read_by_scope",
    "macs_active",
]


class Tensor:
    """Immutable dense array. Hashes by identity so it can key gradient maps."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in (np.float32, np.float64):
                arr = arr.astype(np.float32)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # Arithmetic operators accept a Tensor or a python scalar. Scalars are
    # cast to the tensor's dtype so f32 graphs stay f32.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap_like(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap_like(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap_like(other, self), self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absval(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


class _Node:
    __slots__ = ("out", "grad_fn", "straight_through")

    def __init__(self, out, grad_fn, straight_through=False):
        self.out = out
        self.grad_fn = grad_fn
        self.straight_through = straight_through


class Tape:
    """Ordered record of operations; replayed in reverse by backward()."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss):
        """Accumulate gradients of a scalar loss for every recorded tensor.

        Returns a dict mapping Tensor -> ndarray gradient. Accumulators are
        freshly zero-initialized for each call.
        """
        if not isinstance(loss, Tensor) or loss.data.shape != ():
            raise ContractError(
                f"backward() needs a scalar loss tensor, got shape "
                f"{getattr(loss, 'shape', None)}"
            )
        grads: dict[Tensor, np.ndarray] = {loss: np.ones((), dtype=loss.data.dtype)}

        def acc(t, g):
            prev = grads.get(t)
            grads[t] = g if prev is None else prev + g

        for node in reversed(self.nodes):
            g = grads.get(node.out)
            if g is None:
                continue
            node.grad_fn(g, acc)
        return grads


_TAPE_STACK: list[Tape] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out, grad_fn, straight_through=False):
    tape = _active_tape()
    if tape is not None:
        tape.nodes.append(_Node(out, grad_fn, straight_through))


def _wrap_like(value, ref):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def _as_pair(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise ContractError("at least one operand must be a Tensor")
    if not isinstance(a, Tensor):
        a = _wrap_like(a, b)
    if not isinstance(b, Tensor):
        b = _wrap_like(b, a)
    if a.data.dtype != b.data.dtype:
        raise ContractError(
            f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}; cast explicitly"
        )
    return a, b


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# MAC counter
# ---------------------------------------------------------------------------


class _MacCounter:
    def __init__(self):
        self.active = False
        self.total = 0
        self.by_scope = {}
        self.stack = []


_COUNTER = _MacCounter()


def macs_enable():
    """Reset and start counting matmul multiply-accumulates."""
    _COUNTER.active = True
    _COUNTER.total = 0
    _COUNTER.by_scope = {}


def macs_disable():
    _COUNTER.active = False


def macs_active():
    return _COUNTER.active


def macs_read():
    if not _COUNTER.active:
        raise ContractError("MAC counter read without enable")
    return _COUNTER.total


def macs_read_by_scope():
    if not _COUNTER.active:
        raise ContractError("MAC counter read without enable")
    return dict(_COUNTER.by_scope)


@contextlib.contextmanager
def mac_scope(label):
    """Attribute counted MACs to `label` (labels nest with '/')."""
    _COUNTER.stack.append(label)
    try:
        yield
    finally:
        _COUNTER.stack.pop()


def _count_macs(n):
    if _COUNTER.active:
        _COUNTER.total += n
        key = "/".join(_COUNTER.stack)
        _COUNTER.by_scope[key] = _COUNTER.by_scope.get(key, 0) + n


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _as_pair(a, b)
    out = Tensor(a.data + b.data)

    def grad_fn(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    _record(out, grad_fn)
    return out


def sub(a, b):
    a, b = _as_pair(a, b)
    out = Tensor(a.data - b.data)

    def grad_fn(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(-g, b.data.shape))

    _record(out, grad_fn)
    return out


def mul(a, b):
    a, b = _as_pair(a, b)
    out = Tensor(a.data * b.data)

    def grad_fn(g, acc):
        acc(a, _unbroadcast(g * b.data, a.data.shape))
        acc(b, _unbroadcast(g * a.data, b.data.shape))

    _record(out, grad_fn)
    return out


def div(a, b):
    a, b = _as_pair(a, b)
    out = Tensor(a.data / b.data)

    def grad_fn(g, acc):
        acc(a, _unbroadcast(g / b.data, a.data.shape))
        acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    _record(out, grad_fn)
    return out


def neg(a):
    out = Tensor(-a.data)

    def grad_fn(g, acc):
        acc(a, -g)

    _record(out, grad_fn)
    return out


def absval(a):
    out = Tensor(np.abs(a.data))

    def grad_fn(g, acc):
        acc(a, g * np.sign(a.data))

    _record(out, grad_fn)
    return out


def _mm(x, y):
    # (B, M, K) @ (K, P) runs markedly faster as one flat gemm
    if x.ndim == 3 and y.ndim == 2:
        b, m, k = x.shape
        return (x.reshape(b * m, k) @ y).reshape(b, m, y.shape[1])
    return x @ y


def matmul(a, b):
    """Matrix product over the last two axes; leading batch axes may differ
    by broadcasting a rank-2 operand against a rank-3 one.

    Counts batch * M * K * P multiply-accumulates when counting is enabled.
    """
    a, b = _as_pair(a, b)
    A, B = a.data, b.data
    if A.ndim < 2 or B.ndim < 2 or A.ndim > 3 or B.ndim > 3:
        raise ShapeError(f"matmul supports rank 2 or 3 operands, got {A.shape} x {B.shape}")
    if A.shape[-1] != B.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {A.shape} x {B.shape}")
    if A.ndim == 3 and B.ndim == 3 and A.shape[0] != B.shape[0]:
        raise ShapeError(f"matmul batch dimensions disagree: {A.shape} x {B.shape}")
    out_data = _mm(A, B)
    batch = 1
    if out_data.ndim == 3:
        batch = out_data.shape[0]
    _count_macs(batch * out_data.shape[-2] * A.shape[-1] * out_data.shape[-1])
    out = Tensor(out_data)

    def grad_fn(g, acc):
        ga = _mm(g, np.swapaxes(B, -1, -2))
        while ga.ndim > A.ndim:
            ga = ga.sum(axis=0)
        if A.ndim == 3 and B.ndim == 2:
            k = A.shape[-1]
            gb = A.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(A, -1, -2) @ g
            while gb.ndim > B.ndim:
                gb = gb.sum(axis=0)
        acc(a, ga)
        acc(b, gb)

    _record(out, grad_fn)
    return out


def relu(a):
    out = Tensor(np.maximum(a.data, 0))

    def grad_fn(g, acc):
        acc(a, g * (a.data > 0))

    _record(out, grad_fn)
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor(y)

    def grad_fn(g, acc):
        acc(a, g * (1.0 - y * y))

    _record(out, grad_fn)
    return out


def reduce_sum(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def grad_fn(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        acc(a, np.broadcast_to(g, a.data.shape).copy())

    _record(out, grad_fn)
    return out


def reduce_mean(a, axis=None, keepdims=False):
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.data.size if axis is None else a.data.shape[axis]

    def grad_fn(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g / count, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        acc(a, np.broadcast_to(g / count, a.data.shape).copy())

    _record(out, grad_fn)
    return out


def softmax_rows(a):
    """Row-wise softmax over the last axis with max subtraction."""
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def grad_fn(g, acc):
        dot = (g * y).sum(axis=-1, keepdims=True)
        acc(a, y * (g - dot))

    _record(out, grad_fn)
    return out


def layer_norm(a, scale, offset, eps=1e-5):
    """Normalize over the last axis, then apply per-channel scale and offset."""
    a, scale = _as_pair(a, scale)
    _, offset = _as_pair(a, offset)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv
    out = Tensor(xhat * scale.data + offset.data)
    n = x.shape[-1]

    def grad_fn(g, acc):
        lead = tuple(range(g.ndim - 1))
        acc(scale, (g * xhat).sum(axis=lead))
        acc(offset, g.sum(axis=lead))
        gx = g * scale.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        acc(a, inv * (gx - m1 - xhat * m2))

    _record(out, grad_fn)
    return out


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    labels = np.asarray(labels)
    x = logits.data
    if x.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {x.shape}")
    n, k = x.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.int64)
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    out = Tensor(np.asarray((lse - x[np.arange(n), labels]).mean(), dtype=x.dtype))

    def grad_fn(g, acc):
        p = np.exp(x - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        acc(logits, p * (g / n))

    _record(out, grad_fn)
    return out


def slice_last(a, lo, hi):
    """View columns [lo, hi) of the last axis."""
    out = Tensor(a.data[..., lo:hi])

    def grad_fn(g, acc):
        full = np.zeros(a.data.shape, dtype=g.dtype)
        full[..., lo:hi] = g
        acc(a, full)

    _record(out, grad_fn)
    return out


def concat_last(parts):
    """Concatenate tensors along the last axis."""
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1))
    widths = [p.data.shape[-1] for p in parts]

    def grad_fn(g, acc):
        lo = 0
        for p, w in zip(parts, widths):
            acc(p, g[..., lo:lo + w])
            lo += w

    _record(out, grad_fn)
    return out


def swap_last2(a):
    out = Tensor(np.swapaxes(a.data, -1, -2).copy())

    def grad_fn(g, acc):
        acc(a, np.swapaxes(g, -1, -2))

    _record(out, grad_fn)
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))

    def grad_fn(g, acc):
        acc(a, g.reshape(a.data.shape))

    _record(out, grad_fn)
    return out


def split_heads(a, heads):
    """(B, N, h*c) -> (B*h, N, c) with batch index b*h + head."""
    b, n, hc = a.data.shape
    c = hc // heads
    out_data = a.data.reshape(b, n, heads, c).transpose(0, 2, 1, 3)
    out = Tensor(np.ascontiguousarray(out_data).reshape(b * heads, n, c))

    def grad_fn(g, acc):
        gg = g.reshape(b, heads, n, c).transpose(0, 2, 1, 3)
        acc(a, np.ascontiguousarray(gg).reshape(b, n, hc))

    _record(out, grad_fn)
    return out


def merge_heads(a, heads):
    """(B*h, N, c) -> (B, N, h*c); inverse of split_heads."""
    bh, n, c = a.data.shape
    b = bh // heads
    out_data = a.data.reshape(b, heads, n, c).transpose(0, 2, 1, 3)
    out = Tensor(np.ascontiguousarray(out_data).reshape(b, n, heads * c))

    def grad_fn(g, acc):
        gg = g.reshape(b, n, heads, c).transpose(0, 2, 1, 3)
        acc(a, np.ascontiguousarray(gg).reshape(bh, n, c))

    _record(out, grad_fn)
    return out


def straight_through(a, values):
    """Emit `values` in the forward pass; pass the gradient through unchanged.

    The node is flagged straight-through: its backward rule is the identity
    regardless of how `values` were derived from `a`.
    """
    values = np.asarray(values, dtype=a.data.dtype)
    if values.shape != a.data.shape:
        raise ShapeError(
            f"straight-through values shape {values.shape} != input {a.data.shape}"
        )
    out = Tensor(values)

    def grad_fn(g, acc):
        acc(a, g)

    _record(out, grad_fn, straight_through=True)
    return out
