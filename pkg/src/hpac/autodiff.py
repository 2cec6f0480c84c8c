"""Dense float64 tensors with reverse-mode differentiation.

Only the operators the packet model needs are provided. Every op records a
backprop node when at least one input requires gradients (and gradient
recording is enabled, see :func:`no_grad`). Broadcasting follows numpy rules
for the elementwise ops; gradients are summed back to each input's shape.
"""

import contextlib
import threading

import numpy as np

from . import kernels
from .errors import ContractError, DomainError, ShapeError

LOG_FLOOR = 1e-12

_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / evaluation); per thread."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op=""):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'!r})"

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)

    def __truediv__(self, c):
        if isinstance(c, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / c)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op):
    """Wrap an op result, attaching a graph node only when gradients are wanted."""
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw, "mul")


def scale(a, c):
    """Multiply by a python scalar."""
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def power(a, p):
    """Elementwise ``a ** p`` for a scalar exponent; a must be non-negative when p is fractional."""
    a = as_tensor(a)
    p = float(p)
    out = np.power(a.data, p)

    def bw(g):
        if p == 0.0:
            return (np.zeros_like(a.data),)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(a.data, p - 1.0)
        d[~np.isfinite(d)] = 0.0
        return (g * d,)

    return _node(out, (a,), bw, "power")


def relu(a):
    a = as_tensor(a)
    on = a.data > 0
    return _node(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def elu(a):
    a = as_tensor(a)
    on = a.data > 0
    neg = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(on, a.data, neg)
    return _node(out, (a,), lambda g: (g * np.where(on, 1.0, neg + 1.0),), "elu")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def log(a):
    """Natural log with the argument clamped below at ``LOG_FLOOR``."""
    a = as_tensor(a)
    live = a.data > LOG_FLOOR
    x = np.where(live, a.data, LOG_FLOOR)
    return _node(np.log(x), (a,), lambda g: (np.where(live, g / x, 0.0),), "log")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


# -- reductions and shape ----------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def concat_lastdim(tensors):
    tensors = [as_tensor(t) for t in tensors]
    lead = {t.shape[:-1] for t in tensors}
    if len(lead) != 1:
        raise ShapeError(f"concat_lastdim: leading shapes differ {[t.shape for t in tensors]}")
    cuts = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _node(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), bw, "concat")


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Batched matrix product over the last two axes; both operands need ndim >= 2."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), bw, "matmul")


def conv1d_same(x, w):
    """Zero-padded, length-preserving 1-D convolution.

    x has shape (L, d_in) or (N, L, d_in); w has shape (width, d_in, d_out)
    with odd width. Output position i sees inputs i - (width-1)/2 .. i + (width-1)/2.
    """
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 3 or w.shape[0] % 2 == 0 or x.ndim not in (2, 3) or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"conv1d_same: incompatible shapes {x.shape} and {w.shape}")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    out = kernels.conv1d_forward(xd, w.data)

    def bw(g):
        gx, gw = kernels.conv1d_backward(xd, w.data, g[None] if squeeze else g)
        return (gx[0] if squeeze else gx), gw

    return _node(out[0] if squeeze else out, (x, w), bw, "conv1d_same")


def softmax_lastdim_masked(x, mask=None):
    """Softmax over the last axis; positions where ``mask`` is False get exactly 0.

    ``mask`` broadcasts against ``x``. A row with no unmasked entry is all zeros.
    """
    x = as_tensor(x)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    try:
        np.broadcast_shapes(mask.shape, x.shape)
    except ValueError:
        raise ShapeError(f"softmax_lastdim_masked: mask {mask.shape} vs logits {x.shape}") from None
    out = kernels.masked_softmax_forward(x.data, mask)
    return _node(out, (x,), lambda g: (kernels.masked_softmax_backward(out, g),), "softmax")


def embedding_lookup(table, ids):
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DomainError(f"embedding_lookup: ids must be integers, got {ids.dtype}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise DomainError(f"embedding_lookup: ids must lie in [0, {vocab - 1}]")

    def bw(g):
        return (kernels.embedding_backward(ids, g, vocab),)

    return _node(table.data[ids], (table,), bw, "embedding")


# -- backprop ----------------------------------------------------------------

def _topological(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf tensor."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def reset_grads(params):
    for p in params:
        p.zero_grad()
