"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable op records its
parents and a closure that maps the output gradient to parent gradients;
:func:`backward` walks the recorded graph in reverse topological order and
sums gradients over every use of a node.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float64
_GRAD_ENABLED = True
_DEBUG = False

DIV_EPS = 1e-12


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64, np.longdouble):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


def get_default_dtype():
    return _DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_debug(flag: bool) -> None:
    """Check every forward result for NaN/Inf (slow; for debugging)."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or _DTYPE))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"non-finite output from {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward, "mul")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _result(y, (a,), backward, "tanh")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    y = np.where(pos, a.data, 0).astype(a.dtype, copy=False)

    def backward(g):
        return (g * pos,)

    return _result(y, (a,), backward, "relu")


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant."""
    mask = np.asarray(mask, dtype=bool)
    try:
        full = np.broadcast_to(mask, a.shape)
    except ValueError:
        raise ShapeMismatch(f"masked_fill: mask {mask.shape} vs input {a.shape}") from None
    y = np.where(full, np.asarray(value, dtype=a.dtype), a.data)

    def backward(g):
        return (np.where(full, 0, g).astype(g.dtype, copy=False),)

    return _result(y, (a,), backward, "masked_fill")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return _result(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# -- shape ops --------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _result(y, (a,), lambda g: (g.reshape(old),), "reshape")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _result(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    try:
        y = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeMismatch(f"broadcast_to: {old} -> {shape}") from None
    return _result(y, (a,), lambda g: (_unbroadcast(g, old),), "broadcast_to")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeMismatch(f"concat along {axis}: shapes {shapes}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(y, tensors, backward, "concat")


def getitem(a: Tensor, key) -> Tensor:
    y = a.data[key]
    shape, dtype = a.shape, a.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, key, g)
        return (out,)

    return _result(np.array(y, copy=True) if np.ndim(y) else np.asarray(y), (a,), backward, "getitem")


def gather(table: Tensor, index) -> Tensor:
    """Rows of ``table`` selected by an integer index array (embedding lookup)."""
    index = np.asarray(index)
    if index.dtype.kind not in "iu":
        raise TypeError("gather index must be integral")
    if index.size and (index.min() < -table.shape[0] or index.max() >= table.shape[0]):
        raise IndexError(f"gather index out of range for table of {table.shape[0]} rows")
    shape, dtype = table.shape, table.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _result(table.data[index], (table,), backward, "gather")


# -- reductions -------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    y = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(y), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(ad @ bd, (a, b), backward, "matmul")


# -- normalisation ----------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row max."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (a,), backward, "softmax")


def masked_softmax(scores: Tensor, mask, weights: Tensor | None = None, floor: float = 1e-6) -> Tensor:
    """Softmax over the last axis restricted to ``mask``, optionally reweighted.

    With weights ``w`` the result is ``w_i exp(s_i) / sum_j w_j exp(s_j)`` over
    the unmasked ``j``.  Entries outside the mask are exactly 0.  The shift is
    taken over ``s + log w`` so the largest numerator is 1 whenever some
    unmasked weight is positive; a row whose weighted mass still falls below
    ``floor`` (every entry masked or weighted to zero) is divided by ``floor``
    instead and comes out as (near) zero rather than NaN.
    """
    s = scores.data
    try:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), s.shape)
    except ValueError:
        raise ShapeMismatch(f"masked_softmax: mask shape vs scores {s.shape}") from None
    neg_inf = np.asarray(-np.inf, dtype=s.dtype)
    if weights is None:
        shifted = np.where(mask, s, neg_inf)
    else:
        w = weights.data
        try:
            wb = np.broadcast_to(w, s.shape)
        except ValueError:
            raise ShapeMismatch(f"masked_softmax: weights {w.shape} vs scores {s.shape}") from None
        with np.errstate(divide="ignore"):
            logw = np.log(np.maximum(wb, 0))
        shifted = np.where(mask, s + logw, neg_inf)
    m = shifted.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0)
    with np.errstate(under="ignore"):
        e = np.where(mask, np.exp(s - m), 0).astype(s.dtype, copy=False)
    num = e if weights is None else e * wb
    den = num.sum(axis=-1, keepdims=True)
    clipped = den < floor
    den = np.where(clipped, np.asarray(floor, dtype=s.dtype), den)
    y = num / den

    def backward(g):
        # rows that were clipped have a constant denominator
        inner = np.where(clipped, 0, (g * y).sum(axis=-1, keepdims=True))
        gs = y * (g - inner)
        if weights is None:
            return (gs,)
        gw = (e / den) * (g - inner)
        return gs, _unbroadcast(gw, w.shape)

    parents = (scores,) if weights is None else (scores, weights)
    return _result(y, parents, backward, "masked_softmax")


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance (no affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _result(xhat, (a,), backward, "layer_norm")


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` over unmasked positions."""
    x = logits.data
    targets = np.asarray(targets)
    if targets.shape != x.shape[:-1]:
        raise ShapeMismatch(f"cross_entropy: logits {x.shape} vs targets {targets.shape}")
    w = np.ones(targets.shape, dtype=x.dtype) if mask is None else np.asarray(mask, dtype=x.dtype)
    if w.shape != targets.shape:
        raise ShapeMismatch(f"cross_entropy: mask {w.shape} vs targets {targets.shape}")
    total = w.sum()
    denom = max(float(total), DIV_EPS)
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = np.asarray(-(picked * w).sum() / denom, dtype=x.dtype)

    def backward(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], -1) - 1.0, -1)
        return (p * (w / denom)[..., None] * g,)

    return _result(loss, (logits,), backward, "cross_entropy")


# -- backward pass ------------------------------------------------------------

def _toposort(root: Tensor) -> list:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients are summed into any existing ``.grad``; call ``zero_grad`` on
    parameters between steps. If ``params`` is given, parameters the loss does
    not reach get a zero gradient, and a ``{name: grad}`` dict is returned.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteValue("loss is not finite")
    grads = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    out = {}
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            out[getattr(p, "name", str(id(p)))] = p.grad
    return out


_PRIMITIVES = {
    "matmul": matmul, "add": add, "mul": mul, "softmax": softmax, "layer_norm": layer_norm,
    "sigmoid": sigmoid, "tanh": tanh, "relu": relu, "concat": concat, "gather": gather,
    "masked_fill": masked_fill, "cross_entropy": cross_entropy,
}


def primitive(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply a primitive by name, e.g. ``primitive("matmul", a, b)``."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}; expected one of {sorted(_PRIMITIVES)}") from None
    return fn(*inputs, **kwargs)
