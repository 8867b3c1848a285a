"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A `Tensor` wraps one float32/float64 array plus gradient bookkeeping; ops
build a tape and `backward()` walks it once in reverse topological order.
Training runs in float32; gradient checking runs the same graph in float64.
"""

from __future__ import annotations

import numpy as np


def _coerce(value, like: np.ndarray) -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` to undo numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """One node of the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._prev = parents
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other, self.data)
        a, b = self, other

        def backward(g):
            a._accum(_unbroadcast(g, a.data.shape))
            b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._node(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._node(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other):
        return self + (-_coerce(other, self.data))

    def __rsub__(self, other):
        return _coerce(other, self.data) + (-self)

    def __mul__(self, other):
        other = _coerce(other, self.data)
        a, b = self, other

        def backward(g):
            a._accum(_unbroadcast(g * b.data, a.data.shape))
            b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._node(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("only division by a python scalar is supported")
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        other = _coerce(other, self.data)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul operands must have rank >= 2")

        def backward(g):
            a._accum(_unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape))
            b._accum(_unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape))

        return Tensor._node(a.data @ b.data, (a, b), backward)

    def __getitem__(self, idx):
        a = self

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                np.add.at(full, idx, g)
                a._accum(full)

        return Tensor._node(a.data[idx], (a,), backward)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        a = self
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Tensor._node(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.data.shape)))

    def transpose(self, axes: tuple[int, ...]):
        a = self
        inverse = tuple(np.argsort(axes))
        return Tensor._node(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inverse)))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def backward(g):
            if not a.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.data.shape).copy())

        return Tensor._node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / n

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._node(np.where(mask, a.data, 0.0), (a,), lambda g: a._accum(g * mask))

    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Tensor._node(out_data, (a,), lambda g: a._accum(g * out_data))

    def log(self):
        a = self
        return Tensor._node(np.log(a.data), (a,), lambda g: a._accum(g / a.data))

    # -- backprop -------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `.grad`."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        emitted: set[int] = set()
        visited: set[int] = set()
        stack = [self]
        while stack:
            node = stack[-1]
            nid = id(node)
            if nid not in visited:
                visited.add(nid)
                stack.extend(p for p in node._prev if id(p) not in visited)
                continue
            stack.pop()
            if nid not in emitted:
                emitted.add(nid)
                topo.append(node)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    sizes = [t.data.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accum(g[tuple(idx)])

    return Tensor._node(np.concatenate([t.data for t in parts], axis=axis), tuple(parts), backward)


def masked_fill(t: Tensor, keep: np.ndarray, value: float) -> Tensor:
    """Replace entries where `keep` is False by `value`; no gradient flows into them."""
    a = t
    keep = np.asarray(keep, dtype=bool)
    data = np.where(keep, a.data, a.data.dtype.type(value))
    return Tensor._node(data, (a,), lambda g: a._accum(np.where(keep, g, 0.0)))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtracted)."""
    a = t
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        a._accum((g - inner) * s)

    return Tensor._node(s, (a,), backward)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    a = t
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    probs = np.exp(out_data)

    def backward(g):
        a._accum(g - probs * g.sum(axis=axis, keepdims=True))

    return Tensor._node(out_data, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift.

    Variance uses 1/d (population) normalization.
    """
    if x.data.shape[-1] != gamma.data.shape[-1] or x.data.shape[-1] != beta.data.shape[-1]:
        raise ValueError("gamma/beta width must match the normalized axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        gamma._accum(_unbroadcast(g * xhat, gamma.data.shape))
        beta._accum(_unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            gx = g * gamma.data
            x._accum(inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))

    return Tensor._node(out_data, (x, gamma, beta), backward)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
