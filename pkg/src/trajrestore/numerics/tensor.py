"""Dense tensors with tape-based reverse-mode differentiation.

Every primitive records its parents and a closure that pushes the output
gradient back to them.  ``backward`` orders the recorded nodes
topologically and replays the closures in reverse.  By default the graph is
released after one backward pass; pass ``retain_graph=True`` to keep it.
"""
from __future__ import annotations

import math

import numpy as np

DEFAULT_DTYPE = np.float32


class GraphError(RuntimeError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(name, arr):
    # a NaN/Inf anywhere poisons the sum; only fall back to the full scan when it is non-finite
    if not np.isfinite(arr.sum()) and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} produced a non-finite value")
    return arr


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self, grad=None, retain_graph=False):
        backward(self, grad=grad, retain_graph=retain_graph)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _make(data, op, parents, backward_fn):
    _check_finite(op, data)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._op = op
    return out


def _accumulate(t, g, fresh=False):
    """Add ``g`` into ``t.grad``; ``fresh`` means g is a new array nobody else holds."""
    if not t.requires_grad:
        return
    if t.grad is None:
        if fresh and g.dtype == t.data.dtype and g.flags.writeable:
            t.grad = g.reshape(t.shape)
        else:
            t.grad = np.array(g, dtype=t.data.dtype, copy=True).reshape(t.shape)
    else:
        t.grad += g


# ---------------------------------------------------------------- primitives

def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}") from exc

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out, "add", (a, b), bw)


def broadcast_add(a, b):
    """``add`` restricted to the case where ``b`` broadcasts into ``a``'s shape."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if np.broadcast_shapes(a.shape, b.shape) != a.shape:
        raise ValueError(f"broadcast_add: {b.shape} does not broadcast into {a.shape}")
    return add(a, b)


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}") from exc

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape), fresh=True)

    return _make(out, "sub", (a, b), bw)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}") from exc

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape), fresh=True)
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape), fresh=True)

    return _make(out, "mul", (a, b), bw)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    out = a.data * a.data.dtype.type(c)

    def bw(g):
        _accumulate(a, g * a.data.dtype.type(c), fresh=True)

    return _make(out, "scale", (a,), bw)


def matmul(a, b):
    """Matrix product over the last two axes, broadcasting leading axes."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul: operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape), fresh=True)
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape), fresh=True)

    return _make(out, "matmul", (a, b), bw)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ValueError(f"reshape: cannot reshape {a.shape} to {shape}") from exc

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out, "reshape", (a,), bw)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(i) for i in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"transpose: bad axes {axes} for {a.ndim}-D tensor")
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def bw(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(out, "transpose", (a,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: empty input")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ValueError(f"concat: shape mismatch {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(t, piece)

    return _make(out, "concat", tuple(tensors), bw)


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def sum(a, axes=None):  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=axes)

    def bw(g):
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axes), a.shape))

    return _make(np.asarray(out), "sum", (a,), bw)


def mean(a, axes=None):
    a = as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes)

    def bw(g):
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axes), a.shape) / count)

    return _make(np.asarray(out), "mean", (a,), bw)


def softmax(a):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accumulate(a, y * (g - (g * y).sum(axis=-1, keepdims=True)), fresh=True)

    return _make(y, "softmax", (a,), bw)


def layer_norm(a, eps=1e-5):
    """Normalize over the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + a.data.dtype.type(eps))
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (g - gm - y * gy), fresh=True)

    return _make(y, "layer_norm", (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    dt = x.dtype.type
    x2 = x * x
    inner = dt(_GELU_C) * (x + dt(0.044715) * x2 * x)
    th = np.tanh(inner)
    out = dt(0.5) * x * (dt(1.0) + th)

    def bw(g):
        dinner = dt(_GELU_C) * (dt(1.0) + dt(3 * 0.044715) * x2)
        d = dt(0.5) * (dt(1.0) + th) + dt(0.5) * x * (dt(1.0) - th * th) * dinner
        _accumulate(a, g * d, fresh=True)

    return _make(out, "gelu", (a,), bw)


def mse(pred, target):
    """Mean squared error reduced to a scalar."""
    pred = as_tensor(pred)
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ValueError(f"mse: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean())

    def bw(g):
        gd = diff * (g * 2.0 / n)
        _accumulate(pred, gd)
        _accumulate(target, -gd)

    return _make(out, "mse", (pred, target), bw)


# ------------------------------------------------------------------ backward

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, grad=None, retain_graph=False):
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` buffers, so call
    ``zero_grad`` on parameters between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward: graph already consumed; use retain_graph=True")
    if not loss.requires_grad:
        raise GraphError("backward: loss does not depend on any requires_grad tensor")

    order = _topo_order(loss)
    interior = [n for n in order if n._backward is not None]
    for n in interior:
        n.grad = None
    loss.grad = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # only leaves (and the loss itself) keep a visible gradient
    for n in interior:
        if n is not loss:
            n.grad = None
    if not retain_graph:
        for n in order:
            if n._backward is not None:
                n._backward = None
                n._parents = ()
                n._consumed = True
