"""Small module system and the standard transformer pieces."""
from __future__ import annotations

import math

import numpy as np

from . import numerics as nm
from .numerics import Parameter, Tensor


class Module:
    """Registers parameters and sub-modules in assignment order.

    Parameter names are dotted paths assigned when the module is attached to
    its parent, so ``model.parameters()`` always comes back in the same order.
    """

    def __init__(self):
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", False)

    def __setattr__(self, key, value):
        if isinstance(value, (Parameter, Module)) or (
            isinstance(value, list) and value and all(isinstance(v, Module) for v in value)
        ):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix: str = ""):
        for key, child in self._children.items():
            path = f"{prefix}{key}"
            if isinstance(child, Parameter):
                yield path, child
            elif isinstance(child, Module):
                yield from child.named_parameters(path + ".")
            else:
                for i, m in enumerate(child):
                    yield from m.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for child in self._children.values():
            if isinstance(child, Module):
                yield from child.modules()
            elif isinstance(child, list):
                for m in child:
                    yield from m.modules()

    def train(self, flag: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", flag)
        return self

    def eval(self):
        return self.train(False)


def init_weight(rng: np.random.Generator, shape, fan_in: int, group: str, scale: float = 1.0) -> Parameter:
    data = rng.normal(0.0, scale / math.sqrt(fan_in), size=shape)
    return Parameter(data, name="", group=group)


def zeros(shape, group: str) -> Parameter:
    return Parameter(np.zeros(shape), name="", group=group)


def ones(shape, group: str) -> Parameter:
    return Parameter(np.ones(shape), name="", group=group)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng, group: str, bias: bool = True):
        super().__init__()
        self.w = init_weight(rng, (d_in, d_out), d_in, group)
        self.b = zeros((d_out,), group) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, group: str, eps: float = 1e-5):
        super().__init__()
        self.gain = ones((dim,), group)
        self.bias = zeros((dim,), group)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return nm.layer_norm(x, self.eps) * self.gain + self.bias


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng, group: str, dropout: float = 0.0):
        super().__init__()
        self.inner = Linear(dim, hidden, rng, group)
        self.outer = Linear(hidden, dim, rng, group)
        self.dropout = dropout

    def __call__(self, x: Tensor, rng=None) -> Tensor:
        h = nm.relu(self.inner(x))
        if self.training:
            h = nm.dropout(h, self.dropout, rng)
        return self.outer(h)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng, group: str):
        super().__init__()
        self.heads = heads
        self.dh = dim // heads
        self.wq = Linear(dim, dim, rng, group)
        self.wk = Linear(dim, dim, rng, group)
        self.wv = Linear(dim, dim, rng, group)
        self.wo = Linear(dim, dim, rng, group)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return nm.transpose(x.reshape(b, t, self.heads, self.dh), (0, 2, 1, 3))

    def memory_kv(self, memory: Tensor) -> tuple:
        """Split key/value projections of ``memory``; reusable across decoding steps."""
        return self._split(self.wk(memory)), self._split(self.wv(memory))

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray, kv: tuple | None = None) -> Tensor:
        """``mask``: bool, broadcastable to (B, Tq, Tk); True where attention is allowed."""
        b, tq, d = query.shape
        q = self._split(self.wq(query))
        k, v = kv if kv is not None else self.memory_kv(memory)
        scores = (q @ k.T) * (1.0 / math.sqrt(self.dh))
        attn = nm.masked_softmax(scores, np.asarray(mask)[:, None])
        out = nm.transpose(attn @ v, (0, 2, 1, 3)).reshape(b, tq, d)
        return self.wo(out)
