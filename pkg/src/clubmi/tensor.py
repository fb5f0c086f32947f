"""Dense float64 arrays with reverse-mode automatic differentiation.

The primitive set is fixed and deliberately small. There is no implicit
broadcasting: binary elementwise ops require equal shapes, and the only
broadcasts are :func:`add_bias` (row vector onto every row) and the scalar
helpers :func:`add_scalar` / :func:`scale`.

Every forward output and every propagated adjoint must be finite, otherwise
:class:`~clubmi.errors.NumericError` is raised at the offending primitive.
"""
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError

_grad_enabled = True


@contextmanager
def no_grad():
    """Evaluate without recording parents, e.g. for reporting-only estimates."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {op}")
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = _check_finite(np.array(data, dtype=np.float64), "Tensor()")
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __float__(self):
        return self.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __sub__ = lambda self, other: sub(self, other)
    __mul__ = lambda self, other: mul(self, other)
    __truediv__ = lambda self, other: div(self, other)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op):
    out = Tensor.__new__(Tensor)
    out.data = _check_finite(data, op)
    out.grad = None
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --- elementwise binary -----------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return _node(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "div")
    out = a.data / b.data
    return _node(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def add_scalar(a, c):
    return _node(a.data + float(c), (a,), lambda g: (g,), "add_scalar")


def scale(a, c):
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_bias(x, b):
    """Add a length-k vector to every row of an n x k matrix."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: cannot add {b.shape} to rows of {x.shape}")
    return _node(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


# --- elementwise unary ------------------------------------------------------

def relu(a):
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a):
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if (a.data <= 0).any():
        raise NumericError("log of non-positive value")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a):
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


# --- reductions -------------------------------------------------------------

def _expand(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum(a, axis=None):
    shape = a.shape
    return _node(a.data.sum(axis=axis), (a,), lambda g: (_expand(g, shape, axis),), "sum")


def mean(a, axis=None):
    shape = a.shape
    count = a.size if axis is None else shape[axis]
    if count == 0:
        raise ContractError("mean over an empty axis")
    return _node(
        a.data.mean(axis=axis), (a,), lambda g: (_expand(g, shape, axis) / count,), "mean"
    )


def logsumexp(a, axis=None, mask=None):
    """Max-shifted log-sum-exp; entries where ``mask`` is False are excluded.

    With ``axis=None`` the reduction covers all entries. Every reduced slice
    must keep at least one unmasked entry.
    """
    x = a.data
    if x.size == 0 or (axis is not None and x.shape[axis] == 0):
        raise ContractError("logsumexp over an empty axis")
    if mask is None:
        keep = np.ones(x.shape, dtype=bool)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not keep.any(axis=axis).all():
            raise ContractError("logsumexp: a slice is fully masked")
    shifted_src = np.where(keep, x, -np.inf)
    m = shifted_src.max(axis=axis, keepdims=True)
    e = np.where(keep, np.exp(x - np.where(keep, m, 0.0)), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    weights = e / s
    if axis is None:
        out = out.reshape(())
    else:
        out = np.squeeze(out, axis=axis)

    def backward_fn(g):
        return (_expand(g, x.shape, axis) * weights,)

    return _node(out, (a,), backward_fn, "logsumexp")


# --- structural -------------------------------------------------------------

def transpose(a):
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape):
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def take_rows(a, index):
    """Gather rows ``a[index]``; repeated indices accumulate in the adjoint."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def backward_fn(g):
        acc = np.zeros(shape)
        np.add.at(acc, index, g)
        return (acc,)

    return _node(a.data[index], (a,), backward_fn, "take_rows")


def concat_cols(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: {a.shape} and {b.shape}")
    k = a.shape[1]
    return _node(
        np.concatenate([a.data, b.data], axis=1),
        (a, b),
        lambda g: (g[:, :k], g[:, k:]),
        "concat_cols",
    )


def diagonal(a):
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"diagonal needs a square matrix, got {a.shape}")
    n = a.shape[0]

    def backward_fn(g):
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _node(np.diagonal(a.data).copy(), (a,), backward_fn, "diagonal")


# --- fused kernel -----------------------------------------------------------

def pair_logprob(mu, logvar, y):
    """Matrix of ``log N(y_j | mu_i, diag(exp(logvar_i)))`` over all (i, j)."""
    if mu.shape != logvar.shape or mu.ndim != 2 or y.ndim != 2 or y.shape[1] != mu.shape[1]:
        raise DimensionError(
            f"pair_logprob: mu {mu.shape}, logvar {logvar.shape}, y {y.shape}"
        )
    out = kernels.pair_logprob(mu.data, logvar.data, y.data)

    def backward_fn(g):
        return kernels.pair_logprob_backward(g, mu.data, logvar.data, y.data)

    return _node(out, (mu, logvar, y), backward_fn, "pair_logprob")


# --- reverse pass -----------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _adjoints(loss):
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    adj = {id(loss): np.ones(loss.shape)}
    order = _topo_order(loss)
    for node in reversed(order):
        g = adj.pop(id(node), None) if node._parents else adj.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, f"backward of {node._op}")
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = np.array(pg, dtype=np.float64)
    return order, adj


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
    order, adj = _adjoints(loss)
    for node in order:
        if node._parents or not node.requires_grad:
            continue
        g = adj.get(id(node))
        if g is None:
            g = np.zeros(node.shape)
        node.grad = g if node.grad is None else node.grad + g


def grad(loss, wrt):
    """Return gradients of ``loss`` w.r.t. each tensor in ``wrt`` without touching ``.grad``.

    Leaves with no path to ``loss`` receive zeros.
    """
    _, adj = _adjoints(loss)
    return [adj.get(id(w), np.zeros(w.shape)) for w in wrt]
